/// Row-major z-depth image in meters. Zero or NaN marks a missing sample.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "depth buffer size");
        DepthImage {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, z: f64) -> Self {
        DepthImage::new(width, height, vec![z; width * height])
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, z: f64) {
        self.data[v * self.width + u] = z;
    }

    /// Halves both dimensions, keeping the nearest valid depth of each 2x2
    /// group so that thin foreground structure survives.
    pub fn downsample_min(&self) -> DepthImage {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut out = Vec::with_capacity(w * h);
        for v in 0..h {
            for u in 0..w {
                let z = [(0, 0), (1, 0), (0, 1), (1, 1)]
                    .iter()
                    .map(|&(du, dv)| self.get(2 * u + du, 2 * v + dv))
                    .filter(|z| z.is_finite() && *z > 0.0)
                    .fold(f64::INFINITY, f64::min);
                out.push(if z.is_finite() { z } else { 0.0 });
            }
        }
        DepthImage::new(w, h, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_keeps_nearest_valid() {
        let img = DepthImage::new(4, 2, vec![2.0, 1.0, 0.0, 0.0, 3.0, f64::NAN, 0.0, 0.0]);
        let d = img.downsample_min();
        assert_eq!((d.width, d.height), (2, 1));
        assert_eq!(d.data, vec![1.0, 0.0]);
    }
}

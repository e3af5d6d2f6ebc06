use super::ScaleEvent;
use crate::geometry::Aabb;

/// A node-level (whole-volume) update applied during a frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeUpdate {
    pub level: u8,
    pub coord: [u32; 3],
    pub aabb: Aabb,
    pub log_odds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IntegrationStats {
    pub frame: usize,
    pub nodes_updated: usize,
    pub nodes_split: usize,
    pub nodes_skipped: usize,
    pub nodes_pruned: usize,
    pub blocks_allocated: usize,
    pub blocks_touched: usize,
    /// Live blocks after the frame.
    pub blocks: usize,
    pub cells_fused: usize,
    pub bytes: usize,
    pub ms_pooling: f64,
    pub ms_allocation: f64,
    pub ms_fusion: f64,
    pub ms_propagation: f64,
    pub scale_events: Vec<ScaleEvent>,
    /// Filled only when `record_updates` is set.
    pub node_updates: Vec<NodeUpdate>,
}

impl IntegrationStats {
    pub const CSV_HEADER: &'static str = "frame,nodes_updated,nodes_split,nodes_skipped,nodes_pruned,\
blocks_allocated,blocks_touched,blocks,cells_fused,bytes,ms_pooling,ms_allocation,ms_fusion,ms_propagation";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{:.3},{:.3},{:.3},{:.3}",
            self.frame,
            self.nodes_updated,
            self.nodes_split,
            self.nodes_skipped,
            self.nodes_pruned,
            self.blocks_allocated,
            self.blocks_touched,
            self.blocks,
            self.cells_fused,
            self.bytes,
            self.ms_pooling,
            self.ms_allocation,
            self.ms_fusion,
            self.ms_propagation
        )
    }

    pub fn total_ms(&self) -> f64 {
        self.ms_pooling + self.ms_allocation + self.ms_fusion + self.ms_propagation
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_row_matches_header_arity() {
        let s = IntegrationStats::default();
        assert_eq!(
            s.csv_row().split(',').count(),
            IntegrationStats::CSV_HEADER.split(',').count()
        );
    }
}

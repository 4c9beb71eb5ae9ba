//! Grid network model, per-edge reservation state and routing.

pub mod enumerate;
pub mod oracle;
pub mod routing;
pub mod topology;
pub mod view;

pub use oracle::{apply_entry, d_subopt, serialized_oracle, LiveOutcome, PeriodEntry, SuboptimalityRecord};
pub use routing::{admit, place_path, Admission, FlowRequest, Path, Router};
pub use topology::{Bandwidth, EdgeId, Neighborhood, Topology, TopologyError, VertexId, LINK_CAPACITY};
pub use view::{evict_if_hot, is_hot, EdgeOp, EdgeState, EvictionDraws, FlowId, NetworkView, ViewDelta};

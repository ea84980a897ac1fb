//! Data supply: the labeled synthetic series, CSV ingestion, and sliding
//! window supervision.

pub mod csvio;
pub mod toy;
pub mod window;

pub use csvio::{MultiSeries, export_toy_csv, load_csv, save_csv};
pub use toy::{
    LabeledSeries, StateMachine, ToySeriesConfig, extract_event_amplitude, generate_toy, next_state,
    triangle_weight,
};
pub use window::{Sample, Split, WindowSpec, WindowedDataset};

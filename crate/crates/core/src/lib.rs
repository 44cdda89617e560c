pub mod actions;
pub mod classifier;
pub mod frame;
pub mod pipeline;
pub mod sim;
pub mod taxonomy;
pub mod translator;

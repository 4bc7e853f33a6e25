pub mod analysis;
pub mod battery;
pub mod classifier;
pub mod generation;
pub mod lexicon;
pub mod normalize;
pub mod pipeline;
pub mod sanitize;
pub mod store;
pub mod training;
pub mod traits;

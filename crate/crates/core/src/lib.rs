pub mod features;
pub mod filters;
pub mod fsutil;
pub mod geometry;
pub mod image;
pub mod parallel;
pub mod pyramid;
pub mod matcher;
pub mod stereo;
pub mod evaluation;
pub mod clock;
pub mod tracking;
pub mod synthetic;
pub mod pipeline;

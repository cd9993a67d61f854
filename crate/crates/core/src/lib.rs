pub mod autodiff;
pub mod kg;
pub mod linearize;
pub mod ops;
pub mod tensor;
pub mod topology;
pub mod checkpoint;
pub mod model;
pub mod decode;
pub mod metrics;
pub mod train;
pub mod dataset;
pub mod synth;
pub mod experiment;
pub mod trace;

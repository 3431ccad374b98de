pub mod alignment;
pub mod boundary;
pub mod data;
pub mod diffcore;
pub mod experiment;
pub mod model;
pub mod trainer;

pub mod archive;
pub mod coords;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod imaging;
pub mod latent;
mod linalg;
pub mod tensors;
pub mod objective;
pub mod perceptual;
pub mod renderer;
pub mod trainer;

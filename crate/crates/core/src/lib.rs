//! smallNet toolchain: float training, Q16.16 quantization, a functional
//! fixed-point engine and a cycle-counting model of the hardware datapath.

pub mod dataio;
pub mod fixedpoint;
pub mod hwsim;
pub mod netcore;
pub mod quantizer;
pub mod report;
pub mod trainer;

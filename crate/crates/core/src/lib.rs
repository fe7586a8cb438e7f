pub mod central;
pub mod cli;
pub mod dualnet;
pub mod flowgeom;
pub mod netmodel;
pub mod sdpcore;
pub mod simharness;

pub mod correction;
pub mod eval;
pub mod html;
pub mod ingest;
pub mod io;
pub mod models;
pub mod nn;
pub mod sampling;
pub mod stratify;
pub mod synth;
pub mod validation;

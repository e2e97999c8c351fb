pub mod cli;
pub mod detectors;
pub mod estimate;
pub mod hashing;
pub mod io;
pub mod model;
pub mod oracle;
pub mod prep;
pub mod report;
pub mod synth;

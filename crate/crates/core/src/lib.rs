pub mod backend;
pub mod executor;
pub mod forge;
pub mod ingest;
pub mod tables;
pub mod testgen;
pub mod units;
pub mod workflow;
pub mod matching;
pub mod report;
pub mod rig;

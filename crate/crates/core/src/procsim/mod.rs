//! Labeled fault datasets for the classifier, two ways:
//!
//! - a built-in simplified controlled process (an exothermic CSTR with a
//!   coolant loop feeding a separator with level and temperature loops,
//!   closed by independent PI controllers) that supports the four classic
//!   fault archetypes: step, random, slow drift and sticking;
//! - ingestion of externally generated Tennessee-Eastman-style CSV files
//!   with the 52/53-variable schema (41 xmeas + 11 or 12 xmv).
//!
//! Simulated runs are deterministic per seed, faults take effect exactly at
//! their onset sample, and pre-onset samples are bitwise identical to a
//! no-fault run with the same seed (fault noise draws only start at onset).

mod dataset;
mod plant;
mod tep;

pub use dataset::{generate_dataset, Dataset, DatasetError, Run};
pub use plant::{
    default_scenarios, simulate, ControlAction, FaultArchetype, FaultScenario, PiController,
    PlantParams, PlantState, ProcessSpec, RunOutput, SimError, MEAS_CHANNELS, MV_CHANNELS,
    SIM_BOUNDARY_VARS,
};
pub use tep::{ingest_tep_csv, merge_datasets, tep_schema, TepSchema};

//! Shared fixtures for the benchmarks.

use cogscreen_core::corpus::{generate_synthetic_cohort, SyntheticSpec};
use cogscreen_core::{ConfusionCounts, Dataset, StubScript};

/// A 200-patient cohort (three notes each) with a scripted P0 outcome.
pub fn bench_cohort() -> (Dataset, StubScript) {
    let spec = SyntheticSpec::new(200, 100, (3, 3)).profile("P0", ConfusionCounts::new(90, 60, 35, 5, 10));
    generate_synthetic_cohort(&spec, 7).expect("feasible bench spec")
}

pub const COMPLETIONS: [&str; 5] = [
    "Yes, the note documents progressive memory complaints.",
    "No. The patient is alert and oriented without cognitive findings.",
    "The note mentions forgetfulness. Answer: yes.",
    "It is unclear; yes and no elements appear.",
    "   \n\nno\n",
];

//! Shared fixtures for the benchmarks.

use ctgru_core::autodiff::{random_instance, INSTANCE_WEIGHT_STD};
use ctgru_core::{Arch, EventSequence, HeadKind, ModelParams, ModelSpec, RngStream};

pub const HIDDEN: usize = 20;
pub const VOCAB: usize = 12;

/// A random model of `arch` (bank 1..1000 for CT-GRU) and a sequence of
/// `steps` events.
pub fn fixture(arch: Arch, steps: usize) -> (ModelParams, EventSequence) {
    let mut spec = ModelSpec::new(arch, HIDDEN, VOCAB, HeadKind::LabelSoftmax);
    if arch.is_ctgru() {
        spec = spec.with_bank(1.0, 1000.0);
    }
    let mut rng = RngStream::new(7).split(arch.name());
    random_instance(&mut rng, spec, steps, INSTANCE_WEIGHT_STD).expect("valid fixture")
}

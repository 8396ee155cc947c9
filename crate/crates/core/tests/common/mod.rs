#![allow(dead_code)]

use taea::featurestore::{synth_data, ShiftSpec, SynthSpec};
use taea::pipeline::StreamInputs;
use taea::zeroshot::TextBank;

/// The fixed shifted benchmark: 10 classes, dim 64, 2000 samples,
/// σ = 0.25, rotation by 0.5 rad, seed 0.
pub fn benchmark_spec() -> SynthSpec {
    SynthSpec {
        n_classes: 10,
        dim: 64,
        n_samples: 2000,
        intra_class_sigma: 0.25,
        shift: ShiftSpec::rotation(0.5, 0),
        seed: 0,
    }
}

pub fn inputs_for(spec: &SynthSpec) -> StreamInputs {
    let data = synth_data(spec).unwrap();
    StreamInputs {
        dataset_name: "bench".into(),
        images: data.images,
        bank: TextBank::unnamed(data.prototypes).unwrap(),
        labels: data.labels,
    }
}

pub fn benchmark_inputs() -> StreamInputs {
    inputs_for(&benchmark_spec())
}

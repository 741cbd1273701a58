//! Properties of the public API exercised from outside the crate.

use std::io::Cursor;

use nfseg_core::flowgen::io::{collect_stream, write_flow};
use nfseg_core::flowgen::{generate_scene, to_stream, FlowFile, FlowFormat, FlowStream, Region, SyntheticScene};
use nfseg_core::mrf::{min_cut, FlowNetwork};
use nfseg_core::pipeline::{segment_window, PipelineConfig};
use nfseg_core::{decouple_model, to_vector, AffineMotionModel, BBox, NormalFlowObservation};
use proptest::prelude::*;

fn arcs() -> impl Strategy<Value = (usize, Vec<(usize, usize, f64)>)> {
    (3usize..9).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n, 0.0..10.0f64), 0..30)))
}

proptest! {
    #[test]
    fn min_cut_is_a_cut_no_heavier_than_the_trivial_ones((n, arcs) in arcs()) {
        let mut net = FlowNetwork::new(n, 0, n - 1);
        for &(u, v, c) in &arcs {
            if u != v {
                net.add_arc(u, v, c);
            }
        }
        let cut = min_cut(&net);
        prop_assert!(cut.source_side[0] && !cut.source_side[n - 1]);
        prop_assert!((net.cut_value(&cut.source_side) - cut.value).abs() <= 1e-9);

        let only_source: Vec<bool> = (0..n).map(|v| v == 0).collect();
        let all_but_sink: Vec<bool> = (0..n).map(|v| v != n - 1).collect();
        prop_assert!(cut.value <= net.cut_value(&only_source) + 1e-9);
        prop_assert!(cut.value <= net.cut_value(&all_but_sink) + 1e-9);
    }

    #[test]
    fn model_survives_the_vector_form(
        rho in 0.5..2.0f64,
        theta in -1.0..1.0f64,
        t_x in -20.0..20.0f64,
        t_y in -20.0..20.0f64,
    ) {
        let m = AffineMotionModel::new(rho, theta, t_x, t_y);
        let back = decouple_model(&to_vector(&m)).unwrap();
        prop_assert!(back.max_param_diff(&m) <= 1e-9);
    }

    #[test]
    fn binary_flow_round_trips_bit_for_bit(
        records in prop::collection::vec((0u32..64, 0u32..48, -50.0..50.0f32, -50.0..50.0f32), 0..40),
    ) {
        let observations: Vec<NormalFlowObservation> = records
            .iter()
            .enumerate()
            .map(|(k, &(x, y, nx, ny))| NormalFlowObservation::new(k as f64 * 1e-4, x as f64, y as f64, nx as f64, ny as f64))
            .collect();
        let flow = FlowFile { width: 64, height: 48, observations };
        let mut bytes = Vec::new();
        write_flow(&mut bytes, &flow, FlowFormat::Binary).unwrap();
        let back = collect_stream(FlowStream::from_reader(Cursor::new(bytes.clone())).unwrap()).unwrap();
        prop_assert_eq!((back.width, back.height), (64, 48));
        let mut again = Vec::new();
        write_flow(&mut again, &back, FlowFormat::Binary).unwrap();
        prop_assert_eq!(bytes, again);
    }
}

#[test]
fn single_object_window_separates_and_energy_never_rises() {
    let scene = SyntheticScene::new(160, 120, AffineMotionModel::translation(0.5, 0.3))
        .with_object(Region::Box(BBox::new(40.0, 30.0, 90.0, 80.0)), AffineMotionModel::translation(6.0, 0.0));
    let config = PipelineConfig::default();
    let (raw, _) = generate_scene(&scene, 0.0, config.window_duration, 600, 9).unwrap();
    let window = nfseg_core::pipeline::downsample(&to_stream(&raw), 0.0, 160, 120, &config);
    let result = segment_window(&window, &[], &config).unwrap();

    assert_eq!(result.labeling.len(), window.observations.len());
    assert_eq!(result.imo_labels().len(), 1);
    for pair in result.energy_trace.windows(2) {
        assert!(pair[1].total <= pair[0].total + 1e-9, "{} -> {}", pair[0].total, pair[1].total);
    }
}

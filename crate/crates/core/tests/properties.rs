use proptest::prelude::*;
use qovae_core::datagen::label;
use qovae_core::entanglement::{bipartition_spectrum, summarize, BIPARTITIONS};
use qovae_core::optics::{apply_device, initial_state, run_setup, Device, Path, SimError};
use qovae_core::repr::{parse_dataset, render_record, Record, Setup, Vocabulary, PAD_INDEX};

fn vocab() -> Vocabulary {
    Vocabulary::default()
}

fn setup_strategy() -> impl Strategy<Value = Setup> {
    let size = vocab().size();
    prop::collection::vec(1..size, 0..=12).prop_map(|idx| vocab().decode_indices(&idx))
}

fn single_path_strategy() -> impl Strategy<Value = Device> {
    let path = prop::sample::select(Path::DETECTORS.to_vec());
    prop_oneof![
        path.clone().prop_map(Device::Mirror),
        path.clone().prop_map(Device::DovePrism),
        (path, prop::sample::select(vec![-2, -1, 1, 2])).prop_map(|(p, n)| Device::Hologram(p, n)),
    ]
}

fn nonzero_spectrum(mut v: Vec<f64>) -> Vec<f64> {
    v.retain(|&x| x > 1e-12);
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn photon_counts_are_conserved(setup in setup_strategy()) {
        let sim = vocab().sim_config();
        let mut state = initial_state();
        for d in setup.devices() {
            let Ok(next) = apply_device(&state, d, &sim) else { return Ok(()) };
            // before squaring every ket is a photon pair, whatever the device
            for (k, _) in next.terms() {
                prop_assert_eq!(k.photon_count(), 2);
            }
            state = next;
        }
    }

    #[test]
    fn postselected_states_are_normalized_four_photon(setup in setup_strategy()) {
        match run_setup(&setup, &vocab().sim_config()) {
            Ok(state) => {
                let norm: f64 = state.complex_terms().iter().map(|(_, a)| a.norm_sqr()).sum();
                prop_assert!((norm - 1.0).abs() < 1e-12);
                for (k, _) in state.terms() {
                    prop_assert!(k.detector_oams().is_some());
                    prop_assert_eq!(k.photon_count(), 4);
                }
            }
            Err(SimError::EmptyState | SimError::Overflow(_)) => {}
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn complementary_parts_share_spectra(setup in setup_strategy()) {
        let Ok(state) = run_setup(&setup, &vocab().sim_config()) else { return Ok(()) };
        for &mask in &BIPARTITIONS {
            let a = nonzero_spectrum(bipartition_spectrum(&state, mask).unwrap());
            let b = nonzero_spectrum(bipartition_spectrum(&state, !mask & 0b1111).unwrap());
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn local_devices_leave_entanglement_unchanged(
        setup in setup_strategy(),
        local in single_path_strategy(),
    ) {
        let sim = vocab().sim_config();
        let Ok(before) = run_setup(&setup, &sim) else { return Ok(()) };
        let mut devices = setup.into_devices();
        devices.push(local);
        let after = run_setup(&devices, &sim).unwrap();
        let (s0, s1) = (summarize(&before).unwrap(), summarize(&after).unwrap());
        for k in 0..7 {
            prop_assert!((s0.entropies[k] - s1.entropies[k]).abs() < 1e-9);
        }
        prop_assert_eq!(s0.ranks, s1.ranks);
    }

    #[test]
    fn encode_decode_and_render_parse_roundtrip(setup in setup_strategy()) {
        let v = vocab();
        let m = v.encode_onehot(&setup).unwrap();
        prop_assert_eq!(m.indices().len(), v.max_len());
        prop_assert!(m.indices()[setup.len()..].iter().all(|&i| i == PAD_INDEX));
        prop_assert_eq!(&v.decode_onehot(&m), &setup);
        prop_assert_eq!(&v.parse_setup(&setup.to_string()).unwrap(), &setup);
    }

    #[test]
    fn dataset_lines_roundtrip(setup in setup_strategy()) {
        let v = vocab();
        let Ok(l) = label(&setup, &v.sim_config()) else { return Ok(()) };
        let rec: Record = l.to_record();
        let line = render_record(&rec).unwrap();
        let parsed = parse_dataset(&line, &v).unwrap();
        prop_assert_eq!(parsed.len(), 1);
        prop_assert_eq!(&parsed[0].setup, &setup);
        let lab = parsed[0].label.as_ref().unwrap();
        prop_assert!((lab.total - l.total()).abs() <= 5e-7);
        prop_assert_eq!(lab.ranks, l.summary.ranks);
    }
}

#[test]
fn device_order_matters() {
    let v = vocab();
    let sim = v.sim_config();
    let a = run_setup(&v.parse_setup("OAMHolo(a,1) BS(a,b) OAMHolo(a,1)").unwrap(), &sim).unwrap();
    let b = run_setup(&v.parse_setup("OAMHolo(a,1) OAMHolo(a,1) BS(a,b)").unwrap(), &sim).unwrap();
    assert!(!a.proportional_to(&b).unwrap());
}

#[test]
fn vocabulary_indices_are_stable() {
    let (a, b) = (vocab(), vocab());
    assert_eq!(a.tokens(), b.tokens());
    assert_eq!(a.hash(), b.hash());
}

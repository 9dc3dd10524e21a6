mod common;

use std::time::Instant;

use common::oracle::{best_ghz_fidelity, dense_spectrum, von_neumann};
use num_complex::Complex64;
use qovae_core::amplitude::Amplitude;
use qovae_core::datagen::{draw_rng, label, sample_setup};
use qovae_core::entanglement::{bipartition_spectrum, summarize, BIPARTITIONS};
use qovae_core::optics::{run_setup, Ket, Path, Photon, QuantumState, SimConfig};
use qovae_core::repr::Vocabulary;

pub const WORKED: &str = "BS(b,c) OAMHolo(b,1) DownConv(c,d) Ref(c) OAMHolo(a,1)";
pub const GHZ_SETUP: &str = "Ref(a) OAMHolo(d,-1) BS(b,c) DP(d) Ref(c) OAMHolo(b,-1) Ref(d) \
                             BS(a,b) BS(c,d) BS(a,c) BS(a,c)";

fn four(o: [i32; 4]) -> Ket {
    Ket::new([
        Photon::new(Path::A, o[0]),
        Photon::new(Path::B, o[1]),
        Photon::new(Path::C, o[2]),
        Photon::new(Path::D, o[3]),
    ])
}

#[test]
fn worked_example_matches_exactly() {
    let t0 = Instant::now();
    let v = Vocabulary::default();
    let setup = v.parse_setup(WORKED).unwrap();
    let state = run_setup(&setup, &v.sim_config()).unwrap();
    let kets = [[1, 1, -1, -1], [1, 1, 0, 0], [1, 1, 1, 1]];
    let expected = QuantumState::from_terms(kets.map(|o| (four(o), Amplitude::ONE))).unwrap();
    assert!(state.proportional_to(&expected).unwrap());
    let amps: Vec<&Amplitude> = kets.iter().map(|o| state.amplitude(&four(*o)).unwrap()).collect();
    assert!(amps.iter().all(|a| *a == amps[0]));
    let target = 1.0 / 3f64.sqrt();
    for (_, a) in state.phase_aligned() {
        assert!((a - Complex64::new(target, 0.0)).norm() < 1e-12);
    }
    assert!(t0.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn search_found_setup_is_ghz() {
    let v = Vocabulary::default();
    let setup = v.parse_setup(GHZ_SETUP).unwrap();
    assert_eq!(setup.len(), 11);
    let state = run_setup(&setup, &v.sim_config()).unwrap();
    let fid = best_ghz_fidelity(&state.detector_terms());
    let s = summarize(&state).unwrap();
    assert!(fid >= 0.999, "fidelity {fid}, state {state}");
    assert!((s.total - 7.0 * 2f64.ln()).abs() < 5e-3);
    assert_eq!(s.ranks, [2; 7]);
}

#[test]
fn ghz_fidelity_helper_on_known_states() {
    let h = Complex64::new(0.5f64.sqrt(), 0.0);
    assert!((best_ghz_fidelity(&[([0; 4], h), ([1; 4], h)]) - 1.0).abs() < 1e-12);
    let t = Complex64::new(1.0 / 3f64.sqrt(), 0.0);
    let w = [([1, 1, -1, -1], t), ([1, 1, 0, 0], t), ([1, 1, 1, 1], t)];
    assert_eq!(best_ghz_fidelity(&w), 0.0);
}

#[test]
fn gram_spectra_match_dense_partial_trace() {
    let v = Vocabulary::default();
    let sim = v.sim_config();
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for i in 0.. {
        if checked == 100 {
            break;
        }
        let setup = sample_setup(&mut draw_rng(77, i), &v);
        let Ok(state) = run_setup(&setup, &sim) else { continue };
        if !summarize(&state).unwrap().is_entangled() {
            continue;
        }
        let terms = state.detector_terms();
        for &mask in &BIPARTITIONS {
            let mut gram = bipartition_spectrum(&state, mask).unwrap();
            gram.sort_by(|a, b| b.total_cmp(a));
            let dense = dense_spectrum(&terms, mask);
            for (k, d) in dense.iter().enumerate() {
                worst = worst.max((gram.get(k).copied().unwrap_or(0.0) - d).abs());
            }
            worst = worst.max((von_neumann(&gram) - von_neumann(&dense)).abs());
        }
        checked += 1;
    }
    assert!(worst < 1e-9, "max deviation {worst:e}");
}

#[test]
fn relabeling_is_bitwise_identical() {
    let v = Vocabulary::default();
    let sim = SimConfig::default();
    for i in 0..300 {
        let setup = sample_setup(&mut draw_rng(5, i), &v);
        let (a, b) = (label(&setup, &sim), label(&setup, &sim));
        match (a, b) {
            (Ok(a), Ok(b)) => {
                assert_eq!(a.total().to_bits(), b.total().to_bits());
                assert_eq!(a.summary.ranks, b.summary.ranks);
            }
            (Err(_), Err(_)) => {}
            _ => panic!("labeling is not deterministic"),
        }
    }
}

#[test]
fn without_two_photon_devices_nothing_is_entangled() {
    let v = Vocabulary::default();
    let sim = v.sim_config();
    let s = v.parse_setup("Ref(a) Ref(b) Ref(c)").unwrap();
    assert_eq!(label(&s, &sim).unwrap().total(), 0.0);
    for i in 0..20_000 {
        let setup = sample_setup(&mut draw_rng(11, i), &v);
        if setup.two_photon_count() == 0 {
            assert_eq!(label(&setup, &sim).unwrap().total(), 0.0, "{setup}");
        }
    }
}

// A lone crystal on a detector pair leaves |00>_ab (2|00> + |-1,1> + |1,-1>)_cd,
// so c, d, ac and ad each see the spectrum (4, 1, 1) / 6.
#[test]
fn single_crystal_entangles_its_pair() {
    let v = Vocabulary::default();
    let sim = v.sim_config();
    let h = -[4.0f64 / 6.0, 1.0 / 6.0, 1.0 / 6.0].iter().map(|p| p * p.ln()).sum::<f64>();
    for text in ["DownConv(c,d)", "DownConv(a,b)"] {
        let s = v.parse_setup(text).unwrap();
        assert_eq!(s.two_photon_count(), 1);
        let total = label(&s, &sim).unwrap().total();
        assert!((total - 4.0 * h).abs() < 1e-9, "{text}: {total}");
    }
}

// |-1>_a |0>_b through a splitter postselects to |0>_a|-1>_b - |1>_a|0>_b.
#[test]
fn single_splitter_entangles_distinct_modes() {
    let v = Vocabulary::default();
    let sim = v.sim_config();
    let same = v.parse_setup("BS(a,b)").unwrap();
    assert_eq!(label(&same, &sim).unwrap().total(), 0.0);
    let s = v.parse_setup("OAMHolo(a,-1) BS(a,b)").unwrap();
    let total = label(&s, &sim).unwrap().total();
    assert!((total - 4.0 * std::f64::consts::LN_2).abs() < 1e-9, "{total}");
}

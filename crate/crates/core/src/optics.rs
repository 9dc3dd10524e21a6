//! Symbolic simulation of sequential OAM quantum-optics experiments.
//!
//! A setup starts from the double down-conversion state
//! `|0>_a|0>_b + |0>_c|0>_d`, applies every device in order, then squares
//! the two-photon state and keeps only four-fold coincidences (one photon in
//! each detector path a, b, c, d).
//!
//! Photons are distinguishable labels: a ket is a sorted multiset of
//! `(path, oam)` pairs and superpositions expand by plain tensor product.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use smallvec::SmallVec;

use crate::amplitude::{Amplitude, Overflow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Path {
    A,
    B,
    C,
    D,
    E,
    F,
}

impl Path {
    pub const ALL: [Path; 6] = [Path::A, Path::B, Path::C, Path::D, Path::E, Path::F];
    pub const DETECTORS: [Path; 4] = [Path::A, Path::B, Path::C, Path::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_detector(self) -> bool {
        self.index() < 4
    }

    pub fn letter(self) -> char {
        (b'a' + self as u8) as char
    }

    pub fn from_letter(c: char) -> Option<Path> {
        match c {
            'a' => Some(Path::A),
            'b' => Some(Path::B),
            'c' => Some(Path::C),
            'd' => Some(Path::D),
            'e' => Some(Path::E),
            'f' => Some(Path::F),
            _ => None,
        }
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// One photon: its path and orbital angular momentum quantum number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Photon {
    pub path: Path,
    pub oam: i32,
}

impl Photon {
    pub fn new(path: Path, oam: i32) -> Self {
        Photon { path, oam }
    }
}

/// Canonically sorted photon multiset.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Ket(SmallVec<[Photon; 4]>);

impl Ket {
    pub fn new(photons: impl IntoIterator<Item = Photon>) -> Self {
        let mut v: SmallVec<[Photon; 4]> = photons.into_iter().collect();
        v.sort_unstable();
        Ket(v)
    }

    pub fn photons(&self) -> &[Photon] {
        &self.0
    }

    pub fn photon_count(&self) -> usize {
        self.0.len()
    }

    /// Bit `p` set for each occupied path; `None` if two photons share a path.
    fn path_mask(&self) -> Option<u8> {
        let mut mask = 0u8;
        for ph in &self.0 {
            let bit = 1u8 << ph.path.index();
            if mask & bit != 0 {
                return None;
            }
            mask |= bit;
        }
        Some(mask)
    }

    /// OAM values on paths a, b, c, d for a post-selected ket.
    pub fn detector_oams(&self) -> Option<[i32; 4]> {
        if self.0.len() != 4 {
            return None;
        }
        let mut out = [0; 4];
        for (slot, (ph, expected)) in out.iter_mut().zip(self.0.iter().zip(Path::DETECTORS)) {
            if ph.path != expected {
                return None;
            }
            *slot = ph.oam;
        }
        Some(out)
    }

    fn union(&self, other: &Ket) -> Ket {
        Ket::new(self.0.iter().chain(other.0.iter()).copied())
    }
}

impl fmt::Debug for Ket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Ket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(oams) = self.detector_oams() {
            return write!(f, "|{},{},{},{}⟩", oams[0], oams[1], oams[2], oams[3]);
        }
        for ph in &self.0 {
            write!(f, "|{}⟩_{}", ph.oam, ph.path)?;
        }
        if self.0.is_empty() {
            write!(f, "|vac⟩")?;
        }
        Ok(())
    }
}

/// One optical element of the toolbox.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Device {
    BeamSplitter(Path, Path),
    DownConv(Path, Path),
    Mirror(Path),
    DovePrism(Path),
    Hologram(Path, i32),
}

impl Device {
    pub fn is_two_photon(&self) -> bool {
        matches!(self, Device::BeamSplitter(..) | Device::DownConv(..))
    }

    pub fn paths(&self) -> SmallVec<[Path; 2]> {
        match *self {
            Device::BeamSplitter(p, q) | Device::DownConv(p, q) => SmallVec::from_slice(&[p, q]),
            Device::Mirror(p) | Device::DovePrism(p) | Device::Hologram(p, _) => {
                SmallVec::from_slice(&[p])
            }
        }
    }

    /// Same device with two-path arguments in lexicographic order.
    pub fn canonical(self) -> Device {
        match self {
            Device::BeamSplitter(p, q) if q < p => Device::BeamSplitter(q, p),
            Device::DownConv(p, q) if q < p => Device::DownConv(q, p),
            d => d,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        match *self {
            Device::BeamSplitter(p, q) | Device::DownConv(p, q) if p == q => {
                Err(SimError::InvalidDevice(*self))
            }
            Device::Hologram(_, 0) => Err(SimError::InvalidDevice(*self)),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Overflow(#[from] Overflow),
    #[error("no four-fold coincidence term survives post-selection")]
    EmptyState,
    #[error("invalid device {0:?}")]
    InvalidDevice(Device),
    #[error("expected only two-photon kets before squaring, found {0} photons")]
    NotPairState(usize),
}

/// Sparse superposition with exact amplitudes; zero terms are never stored.
#[derive(Clone, PartialEq, Default)]
pub struct QuantumState {
    terms: BTreeMap<Ket, Amplitude>,
    /// `Some(sum |alpha|^2)` once the state has been normalized.
    norm_sqr: Option<f64>,
}

impl QuantumState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_terms(
        terms: impl IntoIterator<Item = (Ket, Amplitude)>,
    ) -> Result<Self, Overflow> {
        let mut s = QuantumState::new();
        for (k, a) in terms {
            s.add_term(k, a)?;
        }
        Ok(s)
    }

    pub fn add_term(&mut self, ket: Ket, amp: Amplitude) -> Result<(), Overflow> {
        if amp.is_zero() {
            return Ok(());
        }
        match self.terms.entry(ket) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(amp);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                let sum = e.get().checked_add(&amp)?;
                if sum.is_zero() {
                    e.remove();
                } else {
                    *e.get_mut() = sum;
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.norm_sqr.is_some()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Ket, &Amplitude)> {
        self.terms.iter()
    }

    pub fn amplitude(&self, ket: &Ket) -> Option<&Amplitude> {
        self.terms.get(ket)
    }

    /// Marks the state normalized; amplitudes stay exact and the norm is
    /// divided out in [`QuantumState::complex_terms`].
    pub fn normalized(mut self) -> Result<Self, SimError> {
        if self.is_empty() {
            return Err(SimError::EmptyState);
        }
        self.norm_sqr = Some(self.raw_norm_sqr());
        Ok(self)
    }

    /// Sum of `|alpha|^2` over the stored (unnormalized) exact amplitudes.
    pub fn raw_norm_sqr(&self) -> f64 {
        self.terms.values().map(|a| a.norm_sqr()).sum()
    }

    /// Floating-point amplitudes, divided by the norm when normalized.
    pub fn complex_terms(&self) -> Vec<(Ket, Complex64)> {
        let scale = self.norm_sqr.map_or(1.0, |n| 1.0 / n.sqrt());
        self.terms
            .iter()
            .map(|(k, a)| (k.clone(), a.to_complex() * scale))
            .collect()
    }

    /// `(oam_a, oam_b, oam_c, oam_d) -> amplitude` for a post-selected state.
    pub fn detector_terms(&self) -> Vec<([i32; 4], Complex64)> {
        self.complex_terms()
            .into_iter()
            .filter_map(|(k, a)| k.detector_oams().map(|o| (o, a)))
            .collect()
    }

    /// Normalized terms with the global phase fixed so the first
    /// amplitude is real and positive.
    pub fn phase_aligned(&self) -> Vec<(Ket, Complex64)> {
        let terms = self.complex_terms();
        let Some((_, first)) = terms.first() else {
            return terms;
        };
        let phase = first.conj() / first.norm();
        terms.into_iter().map(|(k, a)| (k, a * phase)).collect()
    }

    /// Exact test that `self = c * other` for some nonzero complex `c`,
    /// by cross-multiplying amplitudes against a reference ket.
    pub fn proportional_to(&self, other: &QuantumState) -> Result<bool, Overflow> {
        if self.len() != other.len() || self.terms.keys().ne(other.terms.keys()) {
            return Ok(false);
        }
        let Some((k0, a0)) = self.terms.iter().next() else {
            return Ok(true);
        };
        let b0 = other.terms[k0];
        for (k, a) in &self.terms {
            let b = other.terms[k];
            let lhs = a.checked_mul(&b0)?;
            let rhs = b.checked_mul(a0)?;
            if !lhs.checked_add(&rhs.neg())?.is_zero() {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// `max |a_k - b_k|` after phase alignment, over the union of kets.
    pub fn distance_up_to_phase(&self, other: &QuantumState) -> f64 {
        let a: BTreeMap<Ket, Complex64> = self.phase_aligned().into_iter().collect();
        let b: BTreeMap<Ket, Complex64> = other.phase_aligned().into_iter().collect();
        let zero = Complex64::new(0.0, 0.0);
        a.keys()
            .chain(b.keys())
            .map(|k| {
                let x = a.get(k).copied().unwrap_or(zero);
                let y = b.get(k).copied().unwrap_or(zero);
                (x - y).norm()
            })
            .fold(0.0, f64::max)
    }
}

impl fmt::Debug for QuantumState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for QuantumState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (k, a)) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "({a}){k}")?;
        }
        Ok(())
    }
}

/// Knobs of the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SimConfig {
    /// In-setup down-conversion emits `|l>_p |-l>_p'` for `|l| <= dc_order`.
    pub dc_order: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { dc_order: 1 }
    }
}

/// `|0>_a|0>_b + |0>_c|0>_d`, unnormalized.
pub fn initial_state() -> QuantumState {
    let pair = |p, q| Ket::new([Photon::new(p, 0), Photon::new(q, 0)]);
    QuantumState::from_terms([
        (pair(Path::A, Path::B), Amplitude::ONE),
        (pair(Path::C, Path::D), Amplitude::ONE),
    ])
    .expect("unit amplitudes cannot overflow")
}

type Branches = SmallVec<[(Photon, Amplitude); 2]>;

/// Image of one photon under a single-photon rule, or `None` if untouched.
fn photon_rule(device: &Device, ph: Photon) -> Result<Option<Branches>, SimError> {
    let flip = |ph: Photon| Photon::new(ph.path, -ph.oam);
    let out = match *device {
        Device::BeamSplitter(p, q) if ph.path == p || ph.path == q => {
            let other = if ph.path == p { q } else { p };
            let h = Amplitude::inv_sqrt2();
            let mut b = Branches::new();
            b.push((Photon::new(other, ph.oam), h));
            b.push((flip(ph), h.mul_i()));
            Some(b)
        }
        Device::Mirror(p) if ph.path == p => {
            Some(SmallVec::from_slice(&[(flip(ph), Amplitude::I)]))
        }
        Device::DovePrism(p) if ph.path == p => {
            // i e^{i pi l} = i (-1)^l
            let amp = if ph.oam.rem_euclid(2) == 0 {
                Amplitude::I
            } else {
                Amplitude::I.neg()
            };
            Some(SmallVec::from_slice(&[(flip(ph), amp)]))
        }
        Device::Hologram(p, n) if ph.path == p => {
            let oam = ph.oam.checked_add(n).ok_or(SimError::Overflow(Overflow))?;
            Some(SmallVec::from_slice(&[(Photon::new(p, oam), Amplitude::ONE)]))
        }
        _ => None,
    };
    Ok(out)
}

/// Applies one device to a pre-squaring state.
pub fn apply_device(
    state: &QuantumState,
    device: &Device,
    config: &SimConfig,
) -> Result<QuantumState, SimError> {
    device.validate()?;
    if let Device::DownConv(p, q) = *device {
        let mut out = state.clone();
        let order = config.dc_order as i32;
        for l in -order..=order {
            out.add_term(
                Ket::new([Photon::new(p, l), Photon::new(q, -l)]),
                Amplitude::ONE,
            )?;
        }
        return Ok(out);
    }

    let mut out = QuantumState::new();
    let mut partial: Vec<(SmallVec<[Photon; 4]>, Amplitude)> = Vec::new();
    let mut next = Vec::new();
    for (ket, amp) in state.terms() {
        partial.clear();
        partial.push((SmallVec::new(), *amp));
        for &ph in ket.photons() {
            match photon_rule(device, ph)? {
                None => {
                    for (photons, _) in partial.iter_mut() {
                        photons.push(ph);
                    }
                }
                Some(branches) => {
                    next.clear();
                    for (photons, a) in &partial {
                        for (img, factor) in &branches {
                            let mut p = photons.clone();
                            p.push(*img);
                            next.push((p, a.checked_mul(factor)?));
                        }
                    }
                    std::mem::swap(&mut partial, &mut next);
                }
            }
        }
        for (photons, a) in partial.drain(..) {
            out.add_term(Ket::new(photons), a)?;
        }
    }
    Ok(out)
}

const DETECTOR_MASK: u8 = 0b1111;

/// Forms `|psi> (x) |psi>`, keeps kets with exactly one photon on each of
/// a, b, c, d and none on e, f, and normalizes.
pub fn square_and_postselect(state: &QuantumState) -> Result<QuantumState, SimError> {
    let terms: Vec<(&Ket, &Amplitude, Option<u8>)> = state
        .terms()
        .map(|(k, a)| (k, a, k.path_mask()))
        .collect();
    if let Some((k, _, _)) = terms.iter().find(|(k, _, _)| k.photon_count() != 2) {
        return Err(SimError::NotPairState(k.photon_count()));
    }
    let mut out = QuantumState::new();
    for &(k1, a1, m1) in &terms {
        let Some(m1) = m1 else { continue };
        for &(k2, a2, m2) in &terms {
            let Some(m2) = m2 else { continue };
            if m1 & m2 == 0 && m1 | m2 == DETECTOR_MASK {
                out.add_term(k1.union(k2), a1.checked_mul(a2)?)?;
            }
        }
    }
    out.normalized()
}

/// Runs a whole setup, devices applied in listed order.
pub fn run_setup(devices: &[Device], config: &SimConfig) -> Result<QuantumState, SimError> {
    let mut state = initial_state();
    for d in devices {
        state = apply_device(&state, d, config)?;
    }
    square_and_postselect(&state)
}

//! Device vocabulary, token grammar, one-hot encodings and the line-oriented
//! dataset format.
//!
//! Token grammar (single spaces between tokens, no spaces inside):
//!
//! ```text
//! BS(p,q)  DownConv(p,q)  Ref(p)  DP(p)  OAMHolo(p,n)
//! ```
//!
//! Two-path devices are unordered; the canonical form lists the paths in
//! alphabetical order.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::ops::Deref;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::optics::{Device, Path};

pub const PAD_TOKEN: &str = "PAD";
pub const PAD_INDEX: usize = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    /// Allowed nonzero hologram shifts.
    pub hologram_shifts: Vec<i32>,
    /// Maximum setup length `T`.
    pub max_len: usize,
    /// Down-conversion order used when simulating.
    pub dc_order: u32,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            hologram_shifts: vec![-2, -1, 1, 2],
            max_len: 12,
            dc_order: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReprError {
    #[error("hologram shifts must be nonzero and distinct, got {0:?}")]
    BadHologramShifts(Vec<i32>),
    #[error("maximum length must be between 1 and 64, got {0}")]
    BadMaxLen(usize),
    #[error("setup of length {len} exceeds the maximum length {max}")]
    TooLong { len: usize, max: usize },
    #[error("device {0} is not in the vocabulary")]
    UnknownDevice(String),
    #[error("column {column} is not one-hot")]
    NotOneHot { column: usize },
    #[error("matrix has shape {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    Shape {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
}

/// Where and why a token string failed to parse.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("token {token_index} (byte {offset}): {reason}")]
pub struct ParseError {
    pub token_index: usize,
    pub offset: usize,
    pub reason: String,
}

/// Ordered sequence of devices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct Setup(Vec<Device>);

impl Setup {
    pub fn new(devices: Vec<Device>) -> Self {
        Setup(devices.into_iter().map(Device::canonical).collect())
    }

    pub fn devices(&self) -> &[Device] {
        &self.0
    }

    pub fn into_devices(self) -> Vec<Device> {
        self.0
    }

    /// Number of beam splitters plus down-converters.
    pub fn two_photon_count(&self) -> usize {
        self.0.iter().filter(|d| d.is_two_photon()).count()
    }
}

impl Deref for Setup {
    type Target = [Device];

    fn deref(&self) -> &[Device] {
        &self.0
    }
}

impl FromIterator<Device> for Setup {
    fn from_iter<I: IntoIterator<Item = Device>>(iter: I) -> Self {
        Setup::new(iter.into_iter().collect())
    }
}

impl fmt::Display for Setup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{}", DeviceToken(d))?;
        }
        Ok(())
    }
}

impl Serialize for Setup {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Token rendering of a device, e.g. `OAMHolo(b,-1)`.
pub struct DeviceToken<'a>(pub &'a Device);

impl fmt::Display for DeviceToken<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0.canonical() {
            Device::BeamSplitter(p, q) => write!(f, "BS({p},{q})"),
            Device::DownConv(p, q) => write!(f, "DownConv({p},{q})"),
            Device::Mirror(p) => write!(f, "Ref({p})"),
            Device::DovePrism(p) => write!(f, "DP({p})"),
            Device::Hologram(p, n) => write!(f, "OAMHolo({p},{n})"),
        }
    }
}

pub fn render_device(d: &Device) -> String {
    DeviceToken(d).to_string()
}

/// Index <-> device bijection; index 0 is the padding class.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    config: VocabConfig,
    devices: Vec<Device>,
    index: HashMap<Device, usize>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary::new(VocabConfig::default()).expect("default vocabulary is valid")
    }
}

impl Vocabulary {
    /// PAD; BS pairs (lexicographic); DC pairs; mirrors; dove prisms;
    /// holograms path-major with shifts ascending.
    pub fn new(mut config: VocabConfig) -> Result<Self, ReprError> {
        config.hologram_shifts.sort_unstable();
        let distinct: HashSet<_> = config.hologram_shifts.iter().collect();
        if config.hologram_shifts.contains(&0) || distinct.len() != config.hologram_shifts.len()
        {
            return Err(ReprError::BadHologramShifts(config.hologram_shifts));
        }
        if config.max_len == 0 || config.max_len > 64 {
            return Err(ReprError::BadMaxLen(config.max_len));
        }
        let pairs: Vec<(Path, Path)> = Path::ALL
            .iter()
            .enumerate()
            .flat_map(|(i, &p)| Path::ALL[i + 1..].iter().map(move |&q| (p, q)))
            .collect();
        let mut devices = Vec::new();
        devices.extend(pairs.iter().map(|&(p, q)| Device::BeamSplitter(p, q)));
        devices.extend(pairs.iter().map(|&(p, q)| Device::DownConv(p, q)));
        devices.extend(Path::ALL.iter().map(|&p| Device::Mirror(p)));
        devices.extend(Path::ALL.iter().map(|&p| Device::DovePrism(p)));
        for &p in &Path::ALL {
            for &n in &config.hologram_shifts {
                devices.push(Device::Hologram(p, n));
            }
        }
        let index = devices
            .iter()
            .enumerate()
            .map(|(i, d)| (*d, i + 1))
            .collect();
        Ok(Vocabulary {
            config,
            devices,
            index,
        })
    }

    pub fn config(&self) -> &VocabConfig {
        &self.config
    }

    /// `D`, including the padding class.
    pub fn size(&self) -> usize {
        self.devices.len() + 1
    }

    pub fn max_len(&self) -> usize {
        self.config.max_len
    }

    pub fn sim_config(&self) -> crate::optics::SimConfig {
        crate::optics::SimConfig {
            dc_order: self.config.dc_order,
        }
    }

    /// Device for a non-PAD index.
    pub fn device(&self, index: usize) -> Option<Device> {
        index.checked_sub(1).and_then(|i| self.devices.get(i)).copied()
    }

    pub fn index_of(&self, device: &Device) -> Option<usize> {
        self.index.get(&device.canonical()).copied()
    }

    /// Token strings in index order, PAD first.
    pub fn tokens(&self) -> Vec<String> {
        std::iter::once(PAD_TOKEN.to_string())
            .chain(self.devices.iter().map(render_device))
            .collect()
    }

    /// SHA-256 over the ordered token list and simulation settings.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in self.tokens() {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        h.update(format!("T={};q={}", self.config.max_len, self.config.dc_order).as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn parse_setup(&self, text: &str) -> Result<Setup, ParseError> {
        if text.is_empty() {
            return Ok(Setup::default());
        }
        let mut devices = Vec::new();
        let mut offset = 0;
        for (token_index, token) in text.split(' ').enumerate() {
            let fail = |reason: String| ParseError {
                token_index,
                offset,
                reason,
            };
            let device = parse_token(token).map_err(fail)?;
            if self.index_of(&device).is_none() {
                return Err(fail(format!(
                    "{} is outside the configured vocabulary",
                    render_device(&device)
                )));
            }
            devices.push(device.canonical());
            offset += token.len() + 1;
        }
        Ok(Setup(devices))
    }

    pub fn encode_onehot(&self, setup: &Setup) -> Result<OneHotMatrix, ReprError> {
        let t = self.max_len();
        if setup.len() > t {
            return Err(ReprError::TooLong {
                len: setup.len(),
                max: t,
            });
        }
        let mut indices = Vec::with_capacity(t);
        for d in setup.iter() {
            let i = self
                .index_of(d)
                .ok_or_else(|| ReprError::UnknownDevice(render_device(d)))?;
            indices.push(i);
        }
        indices.resize(t, PAD_INDEX);
        Ok(OneHotMatrix {
            indices,
            vocab_size: self.size(),
        })
    }

    /// Devices up to the first PAD column.
    pub fn decode_onehot(&self, matrix: &OneHotMatrix) -> Setup {
        self.decode_indices(&matrix.indices)
    }

    /// Devices for a class-index sequence, truncated at the first PAD.
    pub fn decode_indices(&self, indices: &[usize]) -> Setup {
        Setup(
            indices
                .iter()
                .map_while(|&i| self.device(i))
                .collect(),
        )
    }
}

fn parse_path(s: &str) -> Result<Path, String> {
    let mut chars = s.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => Path::from_letter(c).ok_or_else(|| format!("unknown path '{s}'")),
        _ => Err(format!("expected a path letter a-f, found '{s}'")),
    }
}

fn parse_token(token: &str) -> Result<Device, String> {
    if token.is_empty() {
        return Err("empty token (tokens are separated by single spaces)".into());
    }
    let open = token
        .find('(')
        .ok_or_else(|| format!("'{token}' is missing '('"))?;
    let inner = token[open + 1..]
        .strip_suffix(')')
        .ok_or_else(|| format!("'{token}' is missing a closing ')'"))?;
    let name = &token[..open];
    let args: Vec<&str> = inner.split(',').collect();
    let two_paths = |args: &[&str]| -> Result<(Path, Path), String> {
        if args.len() != 2 {
            return Err(format!("{name} takes two paths"));
        }
        let (p, q) = (parse_path(args[0])?, parse_path(args[1])?);
        if p == q {
            return Err(format!("{name} needs two different paths"));
        }
        Ok((p, q))
    };
    let one_path = |args: &[&str]| -> Result<Path, String> {
        if args.len() != 1 {
            return Err(format!("{name} takes one path"));
        }
        parse_path(args[0])
    };
    match name {
        "BS" => two_paths(&args).map(|(p, q)| Device::BeamSplitter(p, q)),
        "DownConv" => two_paths(&args).map(|(p, q)| Device::DownConv(p, q)),
        "Ref" => one_path(&args).map(Device::Mirror),
        "DP" => one_path(&args).map(Device::DovePrism),
        "OAMHolo" => {
            if args.len() != 2 {
                return Err("OAMHolo takes a path and a shift".into());
            }
            let p = parse_path(args[0])?;
            let n: i32 = args[1]
                .parse()
                .map_err(|_| format!("bad hologram shift '{}'", args[1]))?;
            if n == 0 {
                return Err("hologram shift must be nonzero".into());
            }
            Ok(Device::Hologram(p, n))
        }
        other => Err(format!("unknown device '{other}'")),
    }
}

/// `T` one-hot columns over `D` classes, stored as class indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OneHotMatrix {
    indices: Vec<usize>,
    vocab_size: usize,
}

impl OneHotMatrix {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Row-major `T x D` dense matrix (one row per sequence position).
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.indices.len() * self.vocab_size];
        for (t, &i) in self.indices.iter().enumerate() {
            out[t * self.vocab_size + i] = 1.0;
        }
        out
    }

    /// Inverse of [`OneHotMatrix::to_dense`]; every row must hold exactly one 1.
    pub fn from_dense(
        data: &[f64],
        max_len: usize,
        vocab_size: usize,
    ) -> Result<Self, ReprError> {
        if data.len() != max_len * vocab_size {
            return Err(ReprError::Shape {
                rows: data.len() / vocab_size.max(1),
                cols: vocab_size,
                expected_rows: max_len,
                expected_cols: vocab_size,
            });
        }
        let mut indices = Vec::with_capacity(max_len);
        for (t, row) in data.chunks(vocab_size).enumerate() {
            let ones: Vec<usize> = row
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == 1.0)
                .map(|(i, _)| i)
                .collect();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones.len() != 1 || zeros != vocab_size - 1 {
                return Err(ReprError::NotOneHot { column: t });
            }
            indices.push(ones[0]);
        }
        Ok(OneHotMatrix {
            indices,
            vocab_size,
        })
    }

    pub fn from_indices(indices: Vec<usize>, vocab_size: usize) -> Result<Self, ReprError> {
        if let Some(column) = indices.iter().position(|&i| i >= vocab_size) {
            return Err(ReprError::NotOneHot { column });
        }
        Ok(OneHotMatrix {
            indices,
            vocab_size,
        })
    }
}

/// Entanglement label stored alongside a setup in a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordLabel {
    pub total: f64,
    pub ranks: [u32; 7],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub setup: Setup,
    pub label: Option<RecordLabel>,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("line {line}: {source}")]
    Parse { line: usize, source: ParseError },
    #[error("line {line}: malformed metadata: {reason}")]
    Metadata { line: usize, reason: String },
    #[error("an empty setup without a label cannot be written (it would be a blank line)")]
    UnrepresentableRecord,
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn parse_ranks(s: &str) -> Result<[u32; 7], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 7 {
        return Err(format!("expected 7 Schmidt ranks, found {}", parts.len()));
    }
    let mut out = [0u32; 7];
    for (slot, p) in out.iter_mut().zip(parts) {
        *slot = p.parse().map_err(|_| format!("bad Schmidt rank '{p}'"))?;
        if *slot == 0 {
            return Err("Schmidt ranks are at least 1".into());
        }
    }
    Ok(out)
}

/// Parses dataset text; `#` lines are comments and blank lines are skipped.
pub fn parse_dataset(text: &str, vocab: &Vocabulary) -> Result<Vec<Record>, DatasetError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.starts_with('#') || raw.trim().is_empty() {
            continue;
        }
        let mut fields = raw.split('\t');
        let tokens = fields.next().unwrap_or_default();
        let setup = vocab
            .parse_setup(tokens)
            .map_err(|source| DatasetError::Parse { line, source })?;
        let label = match (fields.next(), fields.next(), fields.next()) {
            (None, _, _) => None,
            (Some(s), Some(r), None) => {
                let total: f64 = s.parse().map_err(|_| DatasetError::Metadata {
                    line,
                    reason: format!("bad S value '{s}'"),
                })?;
                if !total.is_finite() || total < 0.0 {
                    return Err(DatasetError::Metadata {
                        line,
                        reason: format!("S must be finite and non-negative, got {s}"),
                    });
                }
                let ranks =
                    parse_ranks(r).map_err(|reason| DatasetError::Metadata { line, reason })?;
                Some(RecordLabel { total, ranks })
            }
            _ => {
                return Err(DatasetError::Metadata {
                    line,
                    reason: "expected tokens, S and SRV separated by tabs".into(),
                })
            }
        };
        out.push(Record { setup, label });
    }
    Ok(out)
}

pub fn render_record(record: &Record) -> Result<String, DatasetError> {
    let mut line = record.setup.to_string();
    match &record.label {
        Some(label) => {
            let ranks: Vec<String> = label.ranks.iter().map(u32::to_string).collect();
            line.push_str(&format!("\t{:.6}\t{}", label.total, ranks.join(",")));
        }
        None if record.setup.is_empty() => return Err(DatasetError::UnrepresentableRecord),
        None => {}
    }
    Ok(line)
}

pub fn read_dataset(path: impl AsRef<FsPath>, vocab: &Vocabulary) -> Result<Vec<Record>, DatasetError> {
    let text = fs::read_to_string(path)?;
    parse_dataset(&text, vocab)
}

pub fn write_dataset(path: impl AsRef<FsPath>, records: &[Record]) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        writeln!(w, "{}", render_record(r)?)?;
    }
    w.flush()?;
    Ok(())
}

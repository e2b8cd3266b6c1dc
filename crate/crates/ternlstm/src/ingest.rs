//! Loading, normalizing and splitting labelled time-series datasets.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ternlstm_core::datagen::{make_windows, stratified_split, WindowedSequence};

use crate::config::KeyValues;
use crate::error::{data, io_err, Error, Result};
use crate::spectral::hilbert_envelope;

/// One labelled recording, `channels × samples`.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub label: usize,
    pub signal: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub name: String,
    pub sample_rate_hz: f64,
    pub records: Vec<Record>,
    /// Original label token of every class index.
    pub label_names: Vec<String>,
}

impl RawDataset {
    pub fn classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn channels(&self) -> usize {
        self.records.first().map_or(0, |r| r.signal.len())
    }

    pub fn samples(&self) -> usize {
        self.records.first().and_then(|r| r.signal.first()).map_or(0, Vec::len)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Self {
        Self {
            name: self.name.clone(),
            sample_rate_hz: self.sample_rate_hz,
            records: Vec::new(),
            label_names: self.label_names.clone(),
        }
    }

    pub fn check(&self) -> Result<()> {
        let (m, t) = (self.channels(), self.samples());
        for (i, r) in self.records.iter().enumerate() {
            if r.signal.len() != m || r.signal.iter().any(|c| c.len() != t) {
                return Err(data(format!("record {i} does not have {m} channels of {t} samples")));
            }
            if r.label >= self.classes() {
                return Err(data(format!("record {i} has label {} outside {} classes", r.label, self.classes())));
            }
        }
        Ok(())
    }

    /// Cuts `steps` windows of `window` samples from the start of each record.
    pub fn to_sequences(&self, window: usize, steps: usize) -> Result<Vec<WindowedSequence>> {
        self.records
            .iter()
            .map(|r| Ok(make_windows(&r.signal, r.label, window, steps, 0.0, 0)?))
            .collect()
    }
}

/// Maps label tokens to `0..k` in order of numeric value when all tokens
/// are numbers, otherwise in lexical order.
fn remap_labels(tokens: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut names: Vec<String> = tokens.to_vec();
    names.sort_by(|a, b| match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y),
        _ => a.cmp(b),
    });
    names.dedup();
    let idx = tokens.iter().map(|t| names.iter().position(|n| n == t).expect("present")).collect();
    (idx, names)
}

fn split_row(line: &str) -> Vec<&str> {
    if line.contains('\t') {
        line.split('\t').map(str::trim).collect()
    } else if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

/// Rows of `label v1 … vT` split by tabs, commas or spaces.
pub fn load_ucr(path: &Path) -> Result<RawDataset> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let rows = parse_rows(&text, path, true)?;
    if rows.is_empty() {
        return Err(data(format!("{} holds no records", path.display())));
    }
    let tokens: Vec<String> = rows.iter().map(|(l, _)| l.clone().expect("labelled")).collect();
    let (labels, label_names) = remap_labels(&tokens);
    let records = rows
        .into_iter()
        .zip(labels)
        .map(|((_, v), label)| Record { label, signal: vec![v] })
        .collect();
    Ok(RawDataset {
        name: path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned()),
        sample_rate_hz: 1.0,
        records,
        label_names,
    })
}

type Row = (Option<String>, Vec<f64>);

fn parse_rows(text: &str, path: &Path, labelled: bool) -> Result<Vec<Row>> {
    let mut rows: Vec<Row> = Vec::new();
    let mut width = None;
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells = split_row(line);
        let (label, values) = if labelled {
            (Some(cells[0].to_string()), &cells[1..])
        } else {
            (None, &cells[..])
        };
        let parsed = values
            .iter()
            .map(|c| c.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Parse {
                path: path.into(),
                line: n + 1,
                msg: "non-numeric value".into(),
            })?;
        if parsed.is_empty() || *width.get_or_insert(parsed.len()) != parsed.len() {
            return Err(Error::Parse {
                path: path.into(),
                line: n + 1,
                msg: format!("row has {} values, expected {}", parsed.len(), width.unwrap_or(0)),
            });
        }
        rows.push((label, parsed));
    }
    Ok(rows)
}

fn row_text(label: Option<&str>, values: &[f64]) -> String {
    let mut s = String::new();
    if let Some(l) = label {
        s.push_str(l);
    }
    for (i, v) in values.iter().enumerate() {
        if i > 0 || label.is_some() {
            s.push('\t');
        }
        // shortest representation that parses back to the same bits
        write!(s, "{v:?}").expect("string write");
    }
    s.push('\n');
    s
}

/// Writes channel 0 of every record in the UCR layout.
pub fn write_ucr(ds: &RawDataset, path: &Path) -> Result<()> {
    if ds.channels() != 1 {
        return Err(data("the UCR layout holds univariate records only"));
    }
    let text: String = ds
        .records
        .iter()
        .map(|r| row_text(Some(&ds.label_names[r.label]), &r.signal[0]))
        .collect();
    std::fs::write(path, text).map_err(io_err(path))
}

pub const MANIFEST: &str = "manifest.txt";

fn channel_file(k: usize) -> String {
    format!("ch{k}.tsv")
}

/// Directory with `manifest.txt`, `labels.txt` and one `ch{k}.tsv` per channel.
pub fn write_multichannel(ds: &RawDataset, dir: &Path, extra: &KeyValues) -> Result<()> {
    ds.check()?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut kv = extra.clone();
    kv.insert("name", &ds.name);
    kv.insert("sample_rate_hz", ds.sample_rate_hz);
    kv.insert("channels", ds.channels());
    kv.insert("labels", "labels.txt");
    let p = dir.join(MANIFEST);
    std::fs::write(&p, kv.to_text()).map_err(io_err(&p))?;
    let labels: String = ds.records.iter().map(|r| format!("{}\n", ds.label_names[r.label])).collect();
    let p = dir.join("labels.txt");
    std::fs::write(&p, labels).map_err(io_err(&p))?;
    for k in 0..ds.channels() {
        let text: String = ds.records.iter().map(|r| row_text(None, &r.signal[k])).collect();
        let p = dir.join(channel_file(k));
        std::fs::write(&p, text).map_err(io_err(&p))?;
    }
    Ok(())
}

pub fn load_multichannel(dir: &Path) -> Result<(RawDataset, KeyValues)> {
    let kv = KeyValues::load(&dir.join(MANIFEST))?;
    let channels: usize = kv.require("channels")?;
    let label_path = dir.join(kv.get("labels").unwrap_or("labels.txt"));
    let tokens: Vec<String> = std::fs::read_to_string(&label_path)
        .map_err(io_err(&label_path))?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    let mut per_channel = Vec::with_capacity(channels);
    for k in 0..channels {
        let p = dir.join(channel_file(k));
        let text = std::fs::read_to_string(&p).map_err(io_err(&p))?;
        let rows = parse_rows(&text, &p, false)?;
        if rows.len() != tokens.len() {
            return Err(data(format!("{} has {} rows for {} labels", p.display(), rows.len(), tokens.len())));
        }
        per_channel.push(rows.into_iter().map(|(_, v)| v));
    }
    let (labels, label_names) = remap_labels(&tokens);
    let mut records: Vec<Record> = labels.into_iter().map(|label| Record { label, signal: Vec::new() }).collect();
    for ch in per_channel {
        for (r, v) in records.iter_mut().zip(ch) {
            r.signal.push(v);
        }
    }
    let ds = RawDataset {
        name: kv.get("name").unwrap_or("").to_string(),
        sample_rate_hz: kv.parse_or("sample_rate_hz", 1.0)?,
        records,
        label_names,
    };
    ds.check()?;
    Ok((ds, kv))
}

/// Where a data directory's records come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Predefined `*_TRAIN` / `*_TEST` files.
    Split { train: RawDataset, test: RawDataset },
    Single(RawDataset),
}

fn find_with_suffix(dir: &Path, suffix: &str) -> Result<Option<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(io_err(dir))?;
    let mut found: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(&format!("{suffix}.tsv")) || n.ends_with(&format!("{suffix}.txt")))
        })
        .collect();
    found.sort();
    Ok(found.into_iter().next())
}

/// Accepts a multichannel directory, a directory holding UCR `_TRAIN` and
/// `_TEST` files, or a single UCR file.
pub fn load_data(path: &Path) -> Result<DataSource> {
    if path.is_file() {
        return Ok(DataSource::Single(load_ucr(path)?));
    }
    if path.join(MANIFEST).is_file() {
        return Ok(DataSource::Single(load_multichannel(path)?.0));
    }
    match (find_with_suffix(path, "_TRAIN")?, find_with_suffix(path, "_TEST")?) {
        (Some(a), Some(b)) => {
            let (mut train, mut test) = (load_ucr(&a)?, load_ucr(&b)?);
            unify_labels(&mut train, &mut test);
            Ok(DataSource::Split { train, test })
        }
        _ => Err(data(format!("{} holds neither {MANIFEST} nor _TRAIN/_TEST files", path.display()))),
    }
}

/// Re-indexes both splits against their combined label set.
fn unify_labels(a: &mut RawDataset, b: &mut RawDataset) {
    let tokens: Vec<String> = a
        .records
        .iter()
        .map(|r| a.label_names[r.label].clone())
        .chain(b.records.iter().map(|r| b.label_names[r.label].clone()))
        .collect();
    let (idx, names) = remap_labels(&tokens);
    let n = a.records.len();
    for (r, &l) in a.records.iter_mut().chain(b.records.iter_mut()).zip(&idx) {
        r.label = l;
    }
    debug_assert_eq!(idx.len(), n + b.records.len());
    a.label_names = names.clone();
    b.label_names = names;
}

/// Per-channel mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn fit(ds: &RawDataset) -> Result<Self> {
        let m = ds.channels();
        let mut mean = vec![0.0; m];
        let mut std = vec![0.0; m];
        for k in 0..m {
            let vals = ds.records.iter().flat_map(|r| r.signal[k].iter());
            let (mut n, mut mu, mut m2) = (0.0, 0.0, 0.0);
            for &v in vals {
                n += 1.0;
                let d = v - mu;
                mu += d / n;
                m2 += d * (v - mu);
            }
            if n == 0.0 {
                return Err(data("cannot normalize an empty dataset"));
            }
            mean[k] = mu;
            let s = (m2 / n).sqrt();
            std[k] = if s > 0.0 { s } else { 1.0 };
        }
        Ok(Self { mean, std })
    }

    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn apply(&self, ds: &mut RawDataset) {
        for r in &mut ds.records {
            for (k, ch) in r.signal.iter_mut().enumerate() {
                for v in ch.iter_mut() {
                    *v = (*v - self.mean[k]) / self.std[k];
                }
            }
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("channel,mean,std\n");
        for k in 0..self.mean.len() {
            s += &format!("{k},{:?},{:?}\n", self.mean[k], self.std[k]);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (mut mean, mut std) = (Vec::new(), Vec::new());
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let cells: Vec<&str> = line.split(',').collect();
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| data(format!("bad normalization row `{line}`")));
            if cells.len() != 3 {
                return Err(data(format!("bad normalization row `{line}`")));
            }
            mean.push(parse(cells[1])?);
            std.push(parse(cells[2])?);
        }
        Ok(Self { mean, std })
    }
}

/// Replaces every channel by its Hilbert envelope.
pub fn apply_envelope(ds: &mut RawDataset) {
    for r in &mut ds.records {
        for ch in r.signal.iter_mut() {
            *ch = hilbert_envelope(ch);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub train: RawDataset,
    pub test: RawDataset,
    pub normalization: Normalization,
}

/// Stratified split of `ds`, then z-normalization fitted on the training
/// part only.
pub fn normalize_and_split(ds: &RawDataset, train_fraction: f64, seed: u64) -> Result<Prepared> {
    let (tr, te) = stratified_split(&ds.labels(), train_fraction, seed)?;
    normalize_split(ds.subset(&tr), ds.subset(&te), true)
}

/// Normalizes predefined splits with training statistics.
pub fn normalize_split(mut train: RawDataset, mut test: RawDataset, normalize: bool) -> Result<Prepared> {
    let normalization = if normalize {
        Normalization::fit(&train)?
    } else {
        Normalization::identity(train.channels())
    };
    normalization.apply(&mut train);
    normalization.apply(&mut test);
    Ok(Prepared {
        train,
        test,
        normalization,
    })
}

/// Splits (or keeps predefined splits), optionally normalizing.
pub fn prepare(source: &DataSource, train_fraction: f64, seed: u64, normalize: bool, envelope: bool) -> Result<Prepared> {
    let (mut train, mut test) = match source {
        DataSource::Split { train, test } => (train.clone(), test.clone()),
        DataSource::Single(ds) => {
            let (tr, te) = stratified_split(&ds.labels(), train_fraction, seed)?;
            (ds.subset(&tr), ds.subset(&te))
        }
    };
    if envelope {
        apply_envelope(&mut train);
        apply_envelope(&mut test);
    }
    normalize_split(train, test, normalize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(n_per: usize) -> RawDataset {
        let mut records = Vec::new();
        for c in 0..2 {
            for i in 0..n_per {
                let sig: Vec<f64> = (0..6).map(|t| (c * 10 + i + t) as f64 * 0.3 + 1.0).collect();
                records.push(Record { label: c, signal: vec![sig.clone(), sig.iter().map(|v| -2.0 * v).collect()] });
            }
        }
        RawDataset {
            name: "toy".into(),
            sample_rate_hz: 100.0,
            records,
            label_names: vec!["a".into(), "b".into()],
        }
    }

    #[test]
    fn ucr_labels_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.tsv");
        std::fs::write(&p, "2\t0.5\t1\n1\t-0.5\t2\n").unwrap();
        let ds = load_ucr(&p).unwrap();
        assert_eq!(ds.labels(), vec![1, 0]);
        assert_eq!(ds.label_names, vec!["1", "2"]);
        std::fs::write(&p, "1,1,2,3,4,5,6\n2,1,2,3,4,5\n").unwrap();
        assert!(matches!(load_ucr(&p), Err(Error::Parse { line: 2, .. })));
        std::fs::write(&p, "1 0.1 x\n").unwrap();
        assert!(load_ucr(&p).is_err());
        std::fs::write(&p, "\n").unwrap();
        assert!(load_ucr(&p).is_err());
        std::fs::write(&p, "-1  0.1 0.2\n1  0.3 0.4\n").unwrap();
        assert_eq!(load_ucr(&p).unwrap().label_names, vec!["-1", "1"]);
    }

    #[test]
    fn split_is_stratified_and_train_only_normalized() {
        let ds = toy(50);
        let p = normalize_and_split(&ds, 0.7, 9).unwrap();
        assert_eq!((p.train.records.len(), p.test.records.len()), (70, 30));
        assert_eq!(p.train.labels().iter().filter(|&&l| l == 0).count(), 35);
        for k in 0..2 {
            let v: Vec<f64> = p.train.records.iter().flat_map(|r| r.signal[k].iter().copied()).collect();
            let mu = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / v.len() as f64;
            assert!(mu.abs() < 1e-10 && (var - 1.0).abs() < 1e-10);
        }
        // oracle: statistics of the raw training records alone
        let (tr, _) = stratified_split(&ds.labels(), 0.7, 9).unwrap();
        let oracle = Normalization::fit(&ds.subset(&tr)).unwrap();
        assert_eq!(oracle, p.normalization);
        assert_eq!(normalize_and_split(&ds, 0.7, 9).unwrap(), p);
        assert!(normalize_and_split(&toy(1), 0.7, 0).is_err());
    }

    #[test]
    fn multichannel_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = toy(3);
        let mut extra = KeyValues::default();
        extra.insert("system", "test");
        write_multichannel(&ds, dir.path(), &extra).unwrap();
        let (back, kv) = load_multichannel(dir.path()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(kv.get("system"), Some("test"));
        assert!(matches!(load_data(dir.path()).unwrap(), DataSource::Single(_)));
    }

    #[test]
    fn predefined_splits_share_labels() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("D_TRAIN.tsv"), "1\t0\t1\n-1\t1\t0\n").unwrap();
        std::fs::write(dir.path().join("D_TEST.tsv"), "-1\t0\t0\n").unwrap();
        let DataSource::Split { train, test } = load_data(dir.path()).unwrap() else { panic!() };
        assert_eq!(train.labels(), vec![1, 0]);
        assert_eq!(test.labels(), vec![0]);
        assert_eq!(test.label_names, train.label_names);
    }

    proptest! {
        #[test]
        fn ucr_round_trip_exact(rows in proptest::collection::vec((0usize..3, proptest::collection::vec(-1e6f64..1e6, 5)), 1..20)) {
            let labels: Vec<String> = rows.iter().map(|(l, _)| (l + 1).to_string()).collect();
            let (idx, names) = remap_labels(&labels);
            let ds = RawDataset {
                name: "p".into(),
                sample_rate_hz: 1.0,
                records: rows.iter().zip(idx).map(|((_, v), label)| Record { label, signal: vec![v.clone()] }).collect(),
                label_names: names,
            };
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("p.tsv");
            write_ucr(&ds, &p).unwrap();
            let back = load_ucr(&p).unwrap();
            prop_assert_eq!(back, ds);
        }
    }
}

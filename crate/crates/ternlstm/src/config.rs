//! Flat `key = value` configuration files.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use ternlstm_core::analysis::EmbeddingMetric;
use ternlstm_core::fsm::MachineConfig;
use ternlstm_core::fxp::QFormat;
use ternlstm_core::model::{ConvSpec, NetworkConfig};
use ternlstm_core::quant::Precision;
use ternlstm_core::train::TrainConfig;

use crate::error::{io_err, Error, Result};

/// Parsed key-value pairs; `#` starts a comment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    map: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: origin.into(),
                    line: n + 1,
                    msg: format!("expected `key = value`, got `{line}`"),
                });
            };
            let k = k.trim();
            if k.is_empty() || map.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Parse {
                    path: origin.into(),
                    line: n + 1,
                    msg: format!("empty or repeated key `{k}`"),
                });
            }
        }
        Ok(Self { map })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text, path)
    }

    pub fn insert(&mut self, key: &str, value: impl ToString) {
        self.map.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`"))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key).ok_or_else(|| Error::Config(format!("missing key `{key}`")))?;
        v.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
    }

    pub fn to_text(&self) -> String {
        self.map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Fails on any key outside `known`.
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        match self.keys().find(|k| !known.contains(k)) {
            Some(k) => Err(Error::Config(format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }
}

/// `10x5,30x3` as filters × taps per layer; `none` for no layers.
pub fn parse_conv(s: &str) -> Result<Vec<ConvSpec>> {
    if s.trim() == "none" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|item| {
            let (f, m) = item
                .trim()
                .split_once('x')
                .ok_or_else(|| Error::Config(format!("conv layer `{item}` is not FILTERSxTAPS")))?;
            let f = f.trim().parse().map_err(|_| Error::Config(format!("bad filter count `{f}`")))?;
            let m = m.trim().parse().map_err(|_| Error::Config(format!("bad tap count `{m}`")))?;
            Ok(ConvSpec::new(f, m))
        })
        .collect()
}

pub fn format_conv(conv: &[ConvSpec]) -> String {
    if conv.is_empty() {
        return "none".into();
    }
    conv.iter().map(|c| format!("{}x{}", c.filters, c.taps)).collect::<Vec<_>>().join(",")
}

pub const NETWORK_KEYS: &[&str] = &["window", "steps", "channels", "hidden", "classes", "use_cnn", "conv", "residual"];
pub const TRAIN_KEYS: &[&str] = &[
    "learning_rate",
    "epochs",
    "batch_size",
    "clip",
    "init_range",
    "seed",
    "replication",
    "precision",
    "zero_bias",
    "train_fraction",
    "normalize",
    "envelope",
];
pub const MACHINE_KEYS: &[&str] = &[
    "mac_lanes",
    "bus_bits",
    "wb_read_bits_per_cycle",
    "im_bits_per_cycle",
    "lut_size",
    "clock_hz",
    "wb_capacity_bits",
    "im_capacity_bits",
    "sample_rate_hz",
    "budget_ms",
];
pub const ESTIMATE_KEYS: &[&str] = &["name", "ternary_hidden", "gops"];

/// Network shape. `channels` and `classes` fall back to the given values
/// when absent, so they can come from the data.
pub fn network_config(kv: &KeyValues, channels: usize, classes: usize) -> Result<NetworkConfig> {
    let mut net = NetworkConfig::new(
        kv.require("window")?,
        kv.require("steps")?,
        kv.parse_or("channels", channels)?,
        kv.require("hidden")?,
        kv.parse_or("classes", classes)?,
    );
    net.use_cnn = kv.parse_or("use_cnn", true)?;
    if let Some(c) = kv.get("conv") {
        net.conv = parse_conv(c)?;
    }
    net.residual = kv.parse_or("residual", net.residual)?;
    net.validate()?;
    Ok(net)
}

pub fn write_network(kv: &mut KeyValues, net: &NetworkConfig) {
    kv.insert("window", net.window);
    kv.insert("steps", net.steps);
    kv.insert("channels", net.channels);
    kv.insert("hidden", net.hidden);
    kv.insert("classes", net.classes);
    kv.insert("use_cnn", net.use_cnn);
    kv.insert("conv", format_conv(&net.conv));
    kv.insert("residual", net.residual);
}

pub fn parse_precision(s: &str) -> Result<Precision> {
    Precision::from_name(s).ok_or_else(|| Error::Config(format!("unknown precision `{s}`")))
}

/// Training settings; `precision` overrides the file when given.
pub fn train_config(kv: &KeyValues, precision: Option<Precision>) -> Result<TrainConfig> {
    let p = match precision {
        Some(p) => p,
        None => parse_precision(kv.get("precision").unwrap_or("full"))?,
    };
    let d = TrainConfig::for_precision(p);
    let t = TrainConfig {
        learning_rate: kv.parse_or("learning_rate", d.learning_rate)?,
        clip: kv.parse_or("clip", d.clip)?,
        epochs: kv.parse_or("epochs", d.epochs)?,
        batch_size: kv.parse_or("batch_size", d.batch_size)?,
        init_range: kv.parse_or("init_range", d.init_range)?,
        seed: kv.parse_or("seed", d.seed)?,
        replication: kv.parse_or("replication", d.replication)?,
        precision: p,
        zero_bias: kv.parse_or("zero_bias", d.zero_bias)?,
        epsilon: d.epsilon,
    };
    t.validate()?;
    Ok(t)
}

pub fn machine_config(kv: &KeyValues) -> Result<MachineConfig> {
    let d = MachineConfig::default();
    let mc = MachineConfig {
        mac_lanes: kv.parse_or("mac_lanes", d.mac_lanes)?,
        bus_bits: kv.parse_or("bus_bits", d.bus_bits)?,
        wb_read_bits_per_cycle: kv.parse_or("wb_read_bits_per_cycle", d.wb_read_bits_per_cycle)?,
        im_bits_per_cycle: kv.parse_or("im_bits_per_cycle", d.im_bits_per_cycle)?,
        lut_size: kv.parse_or("lut_size", d.lut_size)?,
        clock_hz: kv.parse_or("clock_hz", d.clock_hz)?,
        activation_format: QFormat::Q4_8,
        wb_capacity_bits: kv.parse_or("wb_capacity_bits", d.wb_capacity_bits)?,
        im_capacity_bits: kv.parse_or("im_capacity_bits", d.im_capacity_bits)?,
    };
    mc.validate()?;
    Ok(mc)
}

pub fn embedding_metric(s: &str) -> Result<EmbeddingMetric> {
    EmbeddingMetric::from_name(s).ok_or_else(|| Error::Config(format!("unknown metric `{s}`")))
}

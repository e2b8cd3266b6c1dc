//! Memory footprint, MAC counts and response time of a network.

use crate::model::NetworkConfig;

/// Storage width of the gate and convolution weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightWidth {
    Full32,
    Ternary2,
    Fixed12,
}

impl WeightWidth {
    pub fn bits(self) -> u64 {
        match self {
            WeightWidth::Full32 => 32,
            WeightWidth::Ternary2 => 2,
            WeightWidth::Fixed12 => 12,
        }
    }

    /// Width of the FC and output matrices, which are never quantized.
    pub fn dense_bits(self) -> u64 {
        match self {
            WeightWidth::Full32 => 32,
            _ => 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostModelInput {
    pub net: NetworkConfig,
    pub width: WeightWidth,
    pub include_intermediates: bool,
}

pub const INTERMEDIATE_BITS: u64 = 12;

pub fn cnn_weight_count(depth: usize, taps: usize, filters: usize) -> u64 {
    (depth * taps * filters) as u64
}

pub fn lstm_weight_count(hidden: usize, input: usize) -> u64 {
    4 * ((hidden + input) * hidden) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MemoryBreakdown {
    pub cnn: u64,
    pub fc: u64,
    pub lstm: u64,
    pub output: u64,
    pub intermediates: u64,
}

impl MemoryBreakdown {
    pub fn total(&self) -> u64 {
        self.cnn + self.fc + self.lstm + self.output + self.intermediates
    }
}

/// Weight storage plus, optionally, `q · (largest map + 2·N_h)` buffered
/// values. Biases are left out.
pub fn memory_breakdown(inp: &CostModelInput) -> MemoryBreakdown {
    let net = &inp.net;
    let l = net.input_len();
    let mut m = MemoryBreakdown::default();
    let mut largest = l;
    if net.cnn_active() {
        for (i, c) in net.conv.iter().enumerate() {
            m.cnn += cnn_weight_count(net.conv_depth(i), c.taps, c.filters) * inp.width.bits();
            largest = largest.max(c.filters * net.window);
        }
        m.fc = (l * net.feature_len()) as u64 * inp.width.dense_bits();
    }
    m.lstm = lstm_weight_count(net.hidden, l) * inp.width.bits();
    m.output = (net.hidden * net.classes) as u64 * inp.width.dense_bits();
    if inp.include_intermediates {
        m.intermediates = (net.steps * (largest + 2 * net.hidden)) as u64 * INTERMEDIATE_BITS;
    }
    m
}

pub fn memory_bits(inp: &CostModelInput) -> u64 {
    memory_breakdown(inp).total()
}

/// Megabits, decimal.
pub fn megabits(bits: u64) -> f64 {
    bits as f64 / 1e6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Per {
    Window,
    Sequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacVariant {
    /// `(L + N_h) · N_h` per window.
    Nominal,
    /// Every multiply the datapath performs: all conv taps over the padded
    /// window, FC, four gate products, and the output layer once per
    /// sequence.
    True,
}

pub fn mac_count(net: &NetworkConfig, per: Per, variant: MacVariant) -> u64 {
    let l = net.input_len() as u64;
    let nh = net.hidden as u64;
    let window = match variant {
        MacVariant::Nominal => (l + nh) * nh,
        MacVariant::True => {
            let mut macs = lstm_weight_count(net.hidden, net.input_len());
            if net.cnn_active() {
                for (i, c) in net.conv.iter().enumerate() {
                    macs += cnn_weight_count(net.conv_depth(i), c.taps, c.filters) * net.window as u64;
                }
                macs += l * net.feature_len() as u64;
            }
            macs
        }
    };
    match (per, variant) {
        (Per::Window, _) => window,
        (Per::Sequence, MacVariant::Nominal) => window * net.steps as u64,
        (Per::Sequence, MacVariant::True) => window * net.steps as u64 + nh * net.classes as u64,
    }
}

/// Seconds to deliver `macs` operations at `gops` giga-operations per second.
pub fn response_time(macs: u64, gops: f64) -> f64 {
    macs as f64 / (gops * 1e9)
}

/// Throughput of the accelerator.
pub const ACCELERATOR_GOPS: f64 = 6.3;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ConvSpec;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn weight_count_examples() {
        assert_eq!(cnn_weight_count(1, 5, 10), 50);
        assert_eq!(cnn_weight_count(10, 3, 30), 900);
        assert_eq!(cnn_weight_count(1, 1, 7), 7);
        assert_eq!(lstm_weight_count(250, 20), 270_000);
        assert_eq!(lstm_weight_count(1, 1), 8);
        assert_eq!(lstm_weight_count(350, 50), 560_000);
    }

    #[test]
    fn ecg200_lstm_memory() {
        let net = NetworkConfig::lstm_only(20, 4, 1, 250, 2);
        let full = memory_bits(&CostModelInput {
            net: net.clone(),
            width: WeightWidth::Full32,
            include_intermediates: true,
        });
        assert!(full >= 8_640_000);
        assert!((megabits(full) - 9.07).abs() / 9.07 < 0.15);
        let tern = memory_breakdown(&CostModelInput {
            net: NetworkConfig::lstm_only(20, 4, 1, 350, 2),
            width: WeightWidth::Ternary2,
            include_intermediates: false,
        });
        assert_eq!(tern.lstm, 1_036_000);
        assert_eq!(tern.cnn, 0);
    }

    #[test]
    fn mac_examples() {
        let db_a = NetworkConfig::lstm_only(5, 30, 128, 250, 8);
        assert_eq!(mac_count(&db_a, Per::Window, MacVariant::Nominal), 890 * 250);
        let db_c = NetworkConfig::lstm_only(10, 15, 128, 350, 12);
        assert_eq!(mac_count(&db_c, Per::Window, MacVariant::Nominal), 1630 * 350);
        let empty = NetworkConfig::lstm_only(5, 3, 2, 0, 2);
        assert_eq!(mac_count(&empty, Per::Window, MacVariant::Nominal), 0);
        assert_eq!(response_time(0, 6.3), 0.0);
        assert!((response_time(220_500, 6.3) * 1e6 - 35.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn true_dominates_nominal_and_ternary_is_smaller(
            window in 1usize..30, steps in 1usize..10, channels in 1usize..4, hidden in 1usize..300,
            classes in 1usize..10, cnn in proptest::bool::ANY, f in 1usize..20, m in 1usize..6,
        ) {
            let mut net = if cnn {
                NetworkConfig::new(window, steps, channels, hidden, classes)
            } else {
                NetworkConfig::lstm_only(window, steps, channels, hidden, classes)
            };
            if cnn {
                net.conv = vec![ConvSpec::new(f, m)];
            }
            for per in [Per::Window, Per::Sequence] {
                prop_assert!(mac_count(&net, per, MacVariant::True) >= mac_count(&net, per, MacVariant::Nominal));
            }
            for inter in [false, true] {
                let mk = |width| CostModelInput { net: net.clone(), width, include_intermediates: inter };
                prop_assert!(memory_bits(&mk(WeightWidth::Ternary2)) < memory_bits(&mk(WeightWidth::Full32)));
            }
        }
    }
}

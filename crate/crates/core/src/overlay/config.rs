use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{unit, SimDuration};

/// One-way message latency model. Samples are derived from hashes, so a
/// message's latency depends only on its identity, never on event order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LatencyModel {
    Constant {
        ms: f64,
    },
    Uniform {
        lo_ms: f64,
        hi_ms: f64,
    },
    /// Peers fall into `regions` groups; messages inside a region are drawn
    /// from the intra range, others from the inter range.
    TwoClass {
        regions: u32,
        intra_lo_ms: f64,
        intra_hi_ms: f64,
        inter_lo_ms: f64,
        inter_hi_ms: f64,
    },
    /// Log-normal with the given mean and log-space standard deviation.
    HeavyTail {
        mean_ms: f64,
        sigma: f64,
    },
}

impl Default for LatencyModel {
    /// Wide-area calibration: 250 ms mean round trip.
    fn default() -> Self {
        LatencyModel::HeavyTail {
            mean_ms: 125.0,
            sigma: 1.0,
        }
    }
}

impl LatencyModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LatencyModel::Constant { ms } => ms >= 0.0,
            LatencyModel::Uniform { lo_ms, hi_ms } => 0.0 <= lo_ms && lo_ms <= hi_ms,
            LatencyModel::TwoClass {
                regions,
                intra_lo_ms,
                intra_hi_ms,
                inter_lo_ms,
                inter_hi_ms,
            } => {
                regions >= 1
                    && 0.0 <= intra_lo_ms
                    && intra_lo_ms <= intra_hi_ms
                    && 0.0 <= inter_lo_ms
                    && inter_lo_ms <= inter_hi_ms
            }
            LatencyModel::HeavyTail { mean_ms, sigma } => mean_ms > 0.0 && sigma >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid latency model {self:?}")))
        }
    }

    /// Latency for a message from a peer in `src_region` to one in
    /// `dst_region`, using `h` as its randomness.
    pub fn sample(&self, h: u64, src_region: u64, dst_region: u64) -> SimDuration {
        let u1 = unit(h);
        let ms = match *self {
            LatencyModel::Constant { ms } => ms,
            LatencyModel::Uniform { lo_ms, hi_ms } => lo_ms + (hi_ms - lo_ms) * u1,
            LatencyModel::TwoClass {
                regions,
                intra_lo_ms,
                intra_hi_ms,
                inter_lo_ms,
                inter_hi_ms,
            } => {
                if src_region % regions as u64 == dst_region % regions as u64 {
                    intra_lo_ms + (intra_hi_ms - intra_lo_ms) * u1
                } else {
                    inter_lo_ms + (inter_hi_ms - inter_lo_ms) * u1
                }
            }
            LatencyModel::HeavyTail { mean_ms, sigma } => {
                // Box-Muller on two independent uniforms.
                let u2 = unit(crate::ids::splitmix(h ^ 0x5bd1_e995));
                let z = (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                let mu = mean_ms.ln() - sigma * sigma / 2.0;
                (mu + sigma * z).exp()
            }
        };
        SimDuration::from_millis_f64(ms)
    }

    pub fn regions(&self) -> u64 {
        match *self {
            LatencyModel::TwoClass { regions, .. } => regions.max(1) as u64,
            _ => 1,
        }
    }
}

/// Simulation parameters. Serialized as TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub latency: LatencyModel,
    /// Local handling time added at every peer that processes a message.
    pub processing_ms: f64,
    /// Probability that a peer is offline during a churn tick.
    pub churn_rate: f64,
    pub churn_tick_s: f64,
    pub poll_period_s: f64,
    /// DHT lookups cost `ceil(log_base(peers))` hops.
    pub dht_hop_base: u32,
    /// Trusted peer lists older than this are refreshed; absent keeps them
    /// until a failure invalidates them.
    pub tpl_ttl_s: Option<f64>,
    /// Resends allowed per user after a failed delivery.
    pub max_retries: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            latency: LatencyModel::default(),
            processing_ms: 10.0,
            churn_rate: 0.0,
            churn_tick_s: 60.0,
            poll_period_s: 10.0,
            dht_hop_base: 16,
            tpl_ttl_s: None,
            max_retries: 3,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.latency.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.churn_rate) {
            return bad(format!("churn_rate {} outside [0, 1]", self.churn_rate));
        }
        if !(self.churn_tick_s > 0.0) || !(self.poll_period_s > 0.0) {
            return bad("churn_tick_s and poll_period_s must be positive".into());
        }
        if self.dht_hop_base < 2 {
            return bad("dht_hop_base must be at least 2".into());
        }
        if self.processing_ms < 0.0 || self.tpl_ttl_s.is_some_and(|t| t < 0.0) {
            return bad("durations must be non-negative".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// DHT routing hops for a network of `peers` nodes; at least one.
    pub fn dht_lookup_hops(&self, peers: usize) -> u32 {
        let base = self.dht_hop_base as f64;
        let hops = (peers.max(1) as f64).ln() / base.ln();
        // Guard against log rounding just above an exact power.
        (hops - 1e-9).ceil().max(1.0) as u32
    }

    pub fn processing(&self) -> SimDuration {
        SimDuration::from_millis_f64(self.processing_ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::mix;

    #[test]
    fn dht_hops_follow_log16() {
        let c = SimConfig::default();
        assert_eq!(c.dht_lookup_hops(1), 1);
        assert_eq!(c.dht_lookup_hops(16), 1);
        assert_eq!(c.dht_lookup_hops(17), 2);
        assert_eq!(c.dht_lookup_hops(100), 2);
        assert_eq!(c.dht_lookup_hops(256), 2);
        assert_eq!(c.dht_lookup_hops(1087), 3);
    }

    #[test]
    fn heavy_tail_mean_is_calibrated() {
        let m = LatencyModel::default();
        let n = 200_000;
        let mut xs: Vec<f64> = (0..n)
            .map(|i| m.sample(mix(3, &[i]), 0, 0).as_millis_f64())
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        assert!((mean - 125.0).abs() < 3.0, "mean {mean}");
        xs.sort_by(f64::total_cmp);
        let median = xs[n as usize / 2];
        assert!((median - 75.8).abs() < 2.0, "median {median}");
    }

    #[test]
    fn two_class_ranges() {
        let m = LatencyModel::TwoClass {
            regions: 2,
            intra_lo_ms: 10.0,
            intra_hi_ms: 20.0,
            inter_lo_ms: 100.0,
            inter_hi_ms: 200.0,
        };
        for i in 0..100 {
            let a = m.sample(mix(1, &[i]), 0, 2).as_millis_f64();
            let b = m.sample(mix(1, &[i]), 0, 1).as_millis_f64();
            assert!((10.0..=20.0).contains(&a));
            assert!((100.0..=200.0).contains(&b));
        }
    }

    #[test]
    fn toml_round_trip_and_validation() {
        let text = "seed = 7\nchurn_rate = 0.05\n[latency]\nkind = \"uniform\"\nlo_ms = 10.0\nhi_ms = 50.0\n";
        let c = SimConfig::from_toml(text).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(
            c.latency,
            LatencyModel::Uniform {
                lo_ms: 10.0,
                hi_ms: 50.0
            }
        );
        let back = SimConfig::from_toml(&toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(SimConfig::from_toml("churn_rate = 1.5").is_err());
        assert!(SimConfig::from_toml("bogus = 1").is_err());
    }
}

//! Plain CSV writers. Floats use Rust's shortest round-trip formatting so
//! values read back bit-exactly.

use std::io::{self, Write};

use crate::evaluation::{Metrics, TraceRow};
use crate::marl::EpisodeLog;

pub const METRICS_HEADER: &str =
    "scheme,payload_bytes,episodes,v2i_sum_capacity_bps_mean,v2i_ci95,delivery_probability,delivery_ci95";
pub const TRACE_HEADER: &str =
    "episode,step,link,subband,power_dbm,v2v_rate_bps,remaining_bits,v2i_sum_capacity_bps,reward";
pub const TRAINING_LOG_HEADER: &str =
    "episode,epsilon,return,mean_v2i_capacity,delivery_rate_so_far";

pub fn write_metrics<W: Write>(rows: &[Metrics], mut out: W) -> io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for m in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            m.scheme,
            m.payload_bytes,
            m.episodes,
            m.v2i_sum_capacity_bps_mean,
            m.v2i_ci95,
            m.delivery_probability,
            m.delivery_ci95
        )?;
    }
    out.flush()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_trace<W: Write>(rows: &[TraceRow], mut out: W) -> io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.episode,
            r.step,
            r.link,
            opt(r.subband),
            opt(r.power_dbm),
            r.v2v_rate_bps,
            r.remaining_bits,
            r.v2i_sum_capacity_bps,
            r.reward
        )?;
    }
    out.flush()
}

pub fn write_training_log<W: Write>(rows: &[EpisodeLog], mut out: W) -> io::Result<()> {
    writeln!(out, "{TRAINING_LOG_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.episode, r.epsilon, r.episode_return, r.mean_v2i_capacity, r.delivery_rate_so_far
        )?;
    }
    out.flush()
}

/// Delivery probability recomputed from a trace: a link succeeds when its
/// last row in an episode shows no remaining bits.
pub fn delivery_from_trace(text: &str) -> Option<f64> {
    use std::collections::BTreeMap;
    let mut last: BTreeMap<(usize, usize), (usize, f64)> = BTreeMap::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return None;
        }
        let (episode, step, link) = (f[0].parse().ok()?, f[1].parse().ok()?, f[2].parse().ok()?);
        let remaining: f64 = f[6].parse().ok()?;
        let entry = last.entry((episode, link)).or_insert((step, remaining));
        if step >= entry.0 {
            *entry = (step, remaining);
        }
    }
    if last.is_empty() {
        return None;
    }
    let ok = last.values().filter(|(_, r)| *r <= 0.0).count();
    Some(ok as f64 / last.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_layout() {
        let m = Metrics {
            scheme: "random".into(),
            payload_bytes: 2120,
            episodes: 3,
            v2i_sum_capacity_bps_mean: 1.5e7,
            v2i_ci95: 0.25,
            delivery_probability: 0.5,
            delivery_ci95: 0.1,
        };
        let mut buf = Vec::new();
        write_metrics(&[m], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            format!("{METRICS_HEADER}\nrandom,2120,3,15000000,0.25,0.5,0.1\n")
        );
    }

    #[test]
    fn trace_round_trips_delivery() {
        let row = |episode, step, link, remaining| TraceRow {
            episode,
            step,
            link,
            subband: if link == 0 { Some(1) } else { None },
            power_dbm: if link == 0 { Some(23.0) } else { None },
            v2v_rate_bps: 1.0,
            remaining_bits: remaining,
            v2i_sum_capacity_bps: 2.0,
            reward: 0.1,
        };
        let rows = vec![
            row(0, 0, 0, 5.0),
            row(0, 0, 1, 5.0),
            row(0, 1, 0, 0.0),
            row(0, 1, 1, 3.0),
        ];
        let mut buf = Vec::new();
        write_trace(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("\n0,0,1,,,1,5,2,0.1\n"));
        assert_eq!(delivery_from_trace(&text), Some(0.5));
    }
}

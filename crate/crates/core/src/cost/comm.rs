//! Transfer and collective timing from measured or configured bandwidths.

use serde::{Deserialize, Serialize};

use super::CostError;
use crate::graph::{DeviceKind, DeviceSpec, LinkParams};
use crate::profile::ProfileDb;

/// Bytes in one "MB" of a MB/s throughput figure.
pub const BYTES_PER_MB: f64 = 1_048_576.0;

const US_PER_S: f64 = 1e6;

pub const ALLREDUCE_SCENARIO: &str = "nccl-allreduce";

/// Bytes expressed in MB (2^20 bytes). The only place the unit is chosen.
pub fn mib(bytes: u64) -> f64 {
    bytes as f64 / BYTES_PER_MB
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum CollectiveAlgo {
    /// Looks up the measured `nccl-allreduce` throughput for the participant count.
    #[default]
    MeasuredThroughput,
    /// `2(n-1)/n * size / bw + 2(n-1) * latency` over a configured link.
    RingAnalytic,
}

/// `latency + size / throughput`, in microseconds.
pub fn transfer_time(bytes: u64, link: &DeviceSpec) -> Result<f64, CostError> {
    if link.kind != DeviceKind::Link {
        return Err(CostError::NotALink(link.id.clone()));
    }
    let params = link
        .link_params()
        .ok_or_else(|| CostError::MissingThroughput(link.id.clone()))?;
    if bytes == 0 {
        return Err(CostError::ZeroBytes);
    }
    Ok(params.latency + mib(bytes) / params.throughput * US_PER_S)
}

fn ring_time(bytes: u64, n: usize, link: LinkParams) -> f64 {
    let steps = 2.0 * (n as f64 - 1.0);
    steps / n as f64 * mib(bytes) / link.throughput * US_PER_S + steps * link.latency
}

/// Allreduce duration in microseconds.
///
/// In measured mode a missing record falls back to the ring formula when a
/// fallback link is given.
pub fn allreduce_time(
    bytes: u64,
    participants: usize,
    db: &ProfileDb,
    algo: CollectiveAlgo,
    path: &str,
    fallback_link: Option<LinkParams>,
) -> Result<f64, CostError> {
    if participants < 2 {
        return Err(CostError::TooFewParticipants(participants));
    }
    if bytes == 0 {
        return Err(CostError::ZeroBytes);
    }
    match algo {
        CollectiveAlgo::MeasuredThroughput => {
            let measured = u32::try_from(participants)
                .ok()
                .and_then(|n| db.query_link(ALLREDUCE_SCENARIO, path, n));
            match (measured, fallback_link) {
                (Some(rec), _) => Ok(rec.latency + mib(bytes) / rec.throughput * US_PER_S),
                (None, Some(link)) => Ok(ring_time(bytes, participants, link)),
                (None, None) => Err(CostError::UnknownCollective {
                    path: path.to_owned(),
                    participants,
                }),
            }
        }
        CollectiveAlgo::RingAnalytic => fallback_link
            .map(|link| ring_time(bytes, participants, link))
            .ok_or(CostError::MissingFallbackLink),
    }
}

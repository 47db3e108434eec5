//! Quota limits, the merge rule for effective quotas, and fixed-point
//! resource arithmetic for reservation ledgers.

use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::model::Resources;

/// Optional numeric limits. An absent field means unlimited.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Quota {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_active_executions: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_cpu_cores: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_ram_gb: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_disk_gb: Option<f64>,
}

fn min_opt<T: PartialOrd + Copy>(a: Option<T>, b: Option<T>) -> Option<T> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if y < x { y } else { x }),
        (x, None) => x,
        (None, y) => y,
    }
}

impl Quota {
    pub const UNLIMITED: Quota = Quota {
        max_active_executions: None,
        max_cpu_cores: None,
        max_ram_gb: None,
        max_disk_gb: None,
    };

    /// Dimension-wise most restrictive combination of two quotas.
    pub fn merge(&self, other: &Quota) -> Quota {
        Quota {
            max_active_executions: min_opt(self.max_active_executions, other.max_active_executions),
            max_cpu_cores: min_opt(self.max_cpu_cores, other.max_cpu_cores),
            max_ram_gb: min_opt(self.max_ram_gb, other.max_ram_gb),
            max_disk_gb: min_opt(self.max_disk_gb, other.max_disk_gb),
        }
    }

    /// Limit per dimension in ledger units, `None` when unlimited.
    pub fn limit(&self, dim: Dimension) -> Option<u64> {
        match dim {
            Dimension::ActiveExecutions => self.max_active_executions,
            Dimension::CpuCores => self.max_cpu_cores,
            Dimension::RamGb => self.max_ram_gb.map(gb_to_milli),
            Dimension::DiskGb => self.max_disk_gb.map(gb_to_milli),
        }
    }

    /// Dimensions in which `usage + request` would exceed this quota.
    pub fn exceeded_by(&self, usage: &ResourceAmounts, request: &ResourceAmounts) -> Vec<Dimension> {
        Dimension::ALL
            .into_iter()
            .filter(|&d| match self.limit(d) {
                Some(limit) => usage.get(d).saturating_add(request.get(d)) > limit,
                None => false,
            })
            .collect()
    }

    /// True when `usage` fits within every limited dimension.
    pub fn admits(&self, usage: &ResourceAmounts) -> bool {
        self.exceeded_by(usage, &ResourceAmounts::ZERO).is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    ActiveExecutions,
    CpuCores,
    RamGb,
    DiskGb,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [
        Dimension::ActiveExecutions,
        Dimension::CpuCores,
        Dimension::RamGb,
        Dimension::DiskGb,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::ActiveExecutions => "active_executions",
            Dimension::CpuCores => "cpu_cores",
            Dimension::RamGb => "ram_gb",
            Dimension::DiskGb => "disk_gb",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// GB quantities are tracked in thousandths so that reserve/release sums are
/// exact.
pub fn gb_to_milli(gb: f64) -> u64 {
    if gb.is_nan() || gb <= 0.0 {
        return 0;
    }
    let scaled = gb * 1000.0;
    // round half up without std's f64::round
    let floor = scaled as u64;
    if scaled - floor as f64 >= 0.5 {
        floor + 1
    } else {
        floor
    }
}

pub fn milli_to_gb(milli: u64) -> f64 {
    milli as f64 / 1000.0
}

/// Amounts held by a reservation or summed in a ledger.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "AmountsRepr", into = "AmountsRepr")]
pub struct ResourceAmounts {
    pub active_executions: u64,
    pub cpu_cores: u64,
    pub ram_milli_gb: u64,
    pub disk_milli_gb: u64,
}

impl ResourceAmounts {
    pub const ZERO: ResourceAmounts = ResourceAmounts {
        active_executions: 0,
        cpu_cores: 0,
        ram_milli_gb: 0,
        disk_milli_gb: 0,
    };

    /// Amounts reserved by one execution requesting `resources`.
    pub fn for_execution(resources: &Resources) -> Self {
        ResourceAmounts {
            active_executions: 1,
            cpu_cores: u64::from(resources.cpu_cores),
            ram_milli_gb: gb_to_milli(resources.ram_gb),
            disk_milli_gb: gb_to_milli(resources.disk_gb),
        }
    }

    pub fn get(&self, dim: Dimension) -> u64 {
        match dim {
            Dimension::ActiveExecutions => self.active_executions,
            Dimension::CpuCores => self.cpu_cores,
            Dimension::RamGb => self.ram_milli_gb,
            Dimension::DiskGb => self.disk_milli_gb,
        }
    }

    pub fn ram_gb(&self) -> f64 {
        milli_to_gb(self.ram_milli_gb)
    }

    pub fn disk_gb(&self) -> f64 {
        milli_to_gb(self.disk_milli_gb)
    }

    pub fn checked_add(&self, other: &ResourceAmounts) -> Option<ResourceAmounts> {
        Some(ResourceAmounts {
            active_executions: self.active_executions.checked_add(other.active_executions)?,
            cpu_cores: self.cpu_cores.checked_add(other.cpu_cores)?,
            ram_milli_gb: self.ram_milli_gb.checked_add(other.ram_milli_gb)?,
            disk_milli_gb: self.disk_milli_gb.checked_add(other.disk_milli_gb)?,
        })
    }

    /// Subtraction that refuses to go negative in any dimension.
    pub fn checked_sub(&self, other: &ResourceAmounts) -> Option<ResourceAmounts> {
        Some(ResourceAmounts {
            active_executions: self.active_executions.checked_sub(other.active_executions)?,
            cpu_cores: self.cpu_cores.checked_sub(other.cpu_cores)?,
            ram_milli_gb: self.ram_milli_gb.checked_sub(other.ram_milli_gb)?,
            disk_milli_gb: self.disk_milli_gb.checked_sub(other.disk_milli_gb)?,
        })
    }

    pub fn is_zero(&self) -> bool {
        *self == ResourceAmounts::ZERO
    }
}

impl core::iter::Sum for ResourceAmounts {
    fn sum<I: Iterator<Item = ResourceAmounts>>(iter: I) -> Self {
        iter.fold(ResourceAmounts::ZERO, |acc, x| {
            acc.checked_add(&x).expect("resource sum overflow")
        })
    }
}

#[derive(Serialize, Deserialize)]
struct AmountsRepr {
    active_executions: u64,
    cpu_cores: u64,
    ram_gb: f64,
    disk_gb: f64,
}

impl From<AmountsRepr> for ResourceAmounts {
    fn from(r: AmountsRepr) -> Self {
        ResourceAmounts {
            active_executions: r.active_executions,
            cpu_cores: r.cpu_cores,
            ram_milli_gb: gb_to_milli(r.ram_gb),
            disk_milli_gb: gb_to_milli(r.disk_gb),
        }
    }
}

impl From<ResourceAmounts> for AmountsRepr {
    fn from(a: ResourceAmounts) -> Self {
        AmountsRepr {
            active_executions: a.active_executions,
            cpu_cores: a.cpu_cores,
            ram_gb: a.ram_gb(),
            disk_gb: a.disk_gb(),
        }
    }
}

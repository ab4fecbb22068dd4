//! Randomness: named RNG streams, duration distributions, and KS-based
//! fitting with an empirical fallback.

mod dist;
mod fit;
mod rng;

use std::fmt;
use std::str::FromStr;

pub use dist::{sample_triangular_travel, DistError, DistKind, DistributionRef};
pub use fit::{
    fit_or_empirical, ks_critical_value, ks_statistic, FitAuditEntry, FitError, FitOutcome, FitVerdict,
    ParametricFamily, MIN_FIT_SAMPLE,
};
pub use rng::RngStream;

use crate::model::UrgencyClass;

/// Timed activities of a mission. Offload delay is per ED and lives on
/// [`crate::model::EdFacility`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    TelephoneTriage,
    AmbulanceAssignment,
    AmbulancePreparation,
    TreatmentOnSite,
    PatientLoad,
    PatientDischarge,
    Sanitization,
}

impl Phase {
    pub const ALL: [Phase; 7] = [
        Phase::TelephoneTriage,
        Phase::AmbulanceAssignment,
        Phase::AmbulancePreparation,
        Phase::TreatmentOnSite,
        Phase::PatientLoad,
        Phase::PatientDischarge,
        Phase::Sanitization,
    ];

    pub fn index(self) -> usize {
        Phase::ALL.iter().position(|&p| p == self).expect("listed")
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::TelephoneTriage => "telephone_triage",
            Phase::AmbulanceAssignment => "ambulance_assignment",
            Phase::AmbulancePreparation => "ambulance_preparation",
            Phase::TreatmentOnSite => "treatment_on_site",
            Phase::PatientLoad => "patient_load",
            Phase::PatientDischarge => "patient_discharge",
            Phase::Sanitization => "sanitization",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Phase::ALL
            .iter()
            .copied()
            .find(|p| p.as_str() == s.trim())
            .ok_or_else(|| format!("unknown phase `{s}`"))
    }
}

/// Duration distributions for every phase and urgency class.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceTimeCatalog {
    // [phase][urgency]
    table: Vec<[DistributionRef; 2]>,
}

impl ServiceTimeCatalog {
    /// Builds the catalog; `lookup` must provide every phase for both classes.
    pub fn build<F>(mut lookup: F) -> Result<Self, (Phase, UrgencyClass)>
    where
        F: FnMut(Phase, UrgencyClass) -> Option<DistributionRef>,
    {
        let mut table = Vec::with_capacity(Phase::ALL.len());
        for phase in Phase::ALL {
            let urgent = lookup(phase, UrgencyClass::Urgent).ok_or((phase, UrgencyClass::Urgent))?;
            let non_urgent = lookup(phase, UrgencyClass::NonUrgent).ok_or((phase, UrgencyClass::NonUrgent))?;
            table.push([urgent, non_urgent]);
        }
        Ok(ServiceTimeCatalog { table })
    }

    /// Every phase and class set to the same distribution.
    pub fn uniform(dist: DistributionRef) -> Self {
        Self::build(|_, _| Some(dist.clone())).expect("complete")
    }

    pub fn get(&self, phase: Phase, urgency: UrgencyClass) -> &DistributionRef {
        &self.table[phase.index()][urgency.index()]
    }

    pub fn set(&mut self, phase: Phase, urgency: UrgencyClass, dist: DistributionRef) {
        self.table[phase.index()][urgency.index()] = dist;
    }

    pub fn sample(&self, phase: Phase, urgency: UrgencyClass, stream: &mut RngStream) -> f64 {
        self.get(phase, urgency).sample(stream)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_requires_every_entry() {
        let missing = ServiceTimeCatalog::build(|p, u| {
            if p == Phase::Sanitization && u == UrgencyClass::NonUrgent {
                None
            } else {
                Some(DistributionRef::constant(1.0).unwrap())
            }
        });
        assert_eq!(missing.unwrap_err(), (Phase::Sanitization, UrgencyClass::NonUrgent));
    }

    #[test]
    fn phase_names_round_trip() {
        for p in Phase::ALL {
            assert_eq!(p.as_str().parse::<Phase>().unwrap(), p);
        }
    }
}

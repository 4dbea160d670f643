//! Energy efficiency `rate / P_tot` for three transmitter architectures.

use core::fmt;

use crate::scenario::PowerModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    /// One RF chain per antenna.
    FullDigital,
    /// Partially-connected phase-shifter hybrid.
    Hybrid,
    /// Dynamic metasurface antenna, one RF chain per microstrip.
    Dma,
}

impl Architecture {
    pub fn tag(self) -> &'static str {
        match self {
            Architecture::FullDigital => "FD",
            Architecture::Hybrid => "HB",
            Architecture::Dma => "DMA",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag.to_ascii_uppercase().as_str() {
            "FD" => Some(Architecture::FullDigital),
            "HB" => Some(Architecture::Hybrid),
            "DMA" => Some(Architecture::Dma),
            _ => None,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Total consumed power (W) for `n` antennas/elements and `l` RF chains.
pub fn total_power(arch: Architecture, max_power: f64, n: usize, l: usize, pm: &PowerModel) -> f64 {
    let radiated = max_power / pm.amplifier_efficiency;
    match arch {
        Architecture::FullDigital => radiated + n as f64 * pm.rf_chain + pm.base_station,
        Architecture::Hybrid => {
            radiated + l as f64 * pm.rf_chain + n as f64 * pm.phase_shifter + pm.base_station
        }
        Architecture::Dma => radiated + l as f64 * pm.rf_chain + pm.base_station,
    }
}

/// Bits/s/Hz per watt.
pub fn energy_efficiency(
    rate: f64,
    arch: Architecture,
    max_power: f64,
    n: usize,
    l: usize,
    pm: &PowerModel,
) -> f64 {
    rate / total_power(arch, max_power, n, l, pm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::dbm_to_watts;
    use approx::assert_relative_eq;

    #[test]
    fn dma_total_power_with_table_values() {
        let pm = PowerModel::default();
        let p = dbm_to_watts(5.0);
        let tot = total_power(Architecture::Dma, p, 64, 8, &pm);
        let expected = 3.1622776601683795e-3 / 0.35 + 8.0 * 0.5011872336272722 + 7.943282347242816;
        assert_relative_eq!(tot, expected, max_relative = 1e-14);
    }

    #[test]
    fn dma_beats_hybrid_by_phase_shifter_power() {
        let pm = PowerModel::default();
        let p = dbm_to_watts(10.0);
        let hb = total_power(Architecture::Hybrid, p, 64, 8, &pm);
        let dma = total_power(Architecture::Dma, p, 64, 8, &pm);
        assert_relative_eq!(hb - dma, 64.0 * pm.phase_shifter, max_relative = 1e-12);
        let r = 12.0;
        assert!(
            energy_efficiency(r, Architecture::Dma, p, 64, 8, &pm)
                > energy_efficiency(r, Architecture::Hybrid, p, 64, 8, &pm)
        );
    }

    #[test]
    fn zero_rate_zero_efficiency() {
        let pm = PowerModel::default();
        assert_eq!(
            energy_efficiency(0.0, Architecture::FullDigital, 1e-3, 16, 4, &pm),
            0.0
        );
    }
}

//! Cell-averaging CFAR over the (range, angle) plane of each Doppler slice.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Detection, Heatmap, HeatmapGrid, PointCloud};
use crate::error::{Error, Result};
use crate::geometry::spherical_to_cartesian;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerAxis {
    pub range: usize,
    pub angle: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CfarAxes {
    RangeAngle,
    Range,
    Angle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfarConfig {
    pub guard_cells: PerAxis,
    pub train_cells: PerAxis,
    pub pfa: f64,
    pub axes: CfarAxes,
}

impl Default for CfarConfig {
    fn default() -> Self {
        CfarConfig {
            guard_cells: PerAxis { range: 2, angle: 2 },
            train_cells: PerAxis { range: 4, angle: 4 },
            pfa: 1e-3,
            axes: CfarAxes::RangeAngle,
        }
    }
}

/// Half-extents of the guard and outer windows along (range, angle).
#[derive(Debug, Clone, Copy)]
struct Window {
    guard: (usize, usize),
    outer: (usize, usize),
}

impl Window {
    fn training_cells(&self) -> usize {
        let area = |(r, a): (usize, usize)| (2 * r + 1) * (2 * a + 1);
        area(self.outer) - area(self.guard)
    }
}

impl CfarConfig {
    fn window(&self, grid: &HeatmapGrid) -> Result<Window> {
        if !(self.pfa > 0.0 && self.pfa < 1.0) {
            return Err(Error::Config(format!("cfar.pfa must be in (0, 1), got {}", self.pfa)));
        }
        let use_range = self.axes != CfarAxes::Angle;
        let use_angle = self.axes != CfarAxes::Range;
        if (use_range && self.train_cells.range == 0) || (use_angle && self.train_cells.angle == 0) {
            return Err(Error::Config("cfar.train_cells must be >= 1 on every active axis".into()));
        }
        let pick = |on: bool, v: usize| if on { v } else { 0 };
        let guard = (pick(use_range, self.guard_cells.range), pick(use_angle, self.guard_cells.angle));
        let outer = (
            guard.0 + pick(use_range, self.train_cells.range),
            guard.1 + pick(use_angle, self.train_cells.angle),
        );
        if 2 * outer.0 + 1 > grid.range_bins || 2 * outer.1 + 1 > grid.angle_bins {
            return Err(Error::Config(format!(
                "cfar window {}x{} exceeds the {}x{} range-angle plane",
                2 * outer.0 + 1,
                2 * outer.1 + 1,
                grid.range_bins,
                grid.angle_bins
            )));
        }
        Ok(Window { guard, outer })
    }

    /// `α = N (pfa^{−1/N} − 1)` for `n` training cells.
    pub fn scale_factor(&self, n: usize) -> f64 {
        let n = n as f64;
        n * (self.pfa.powf(-1.0 / n) - 1.0)
    }
}

fn detection(grid: &HeatmapGrid, k: usize, m: usize, n: usize, value: f64) -> Result<Detection> {
    Ok(Detection {
        position_m: spherical_to_cartesian(grid.range_center(k), grid.angle_center(n), 0.0)?,
        radial_velocity_mps: grid.doppler_center(m),
        intensity: value,
    })
}

/// Summed-area table of one Doppler slice, `(R + 1) × (A + 1)`.
fn integral(h: &Heatmap, m: usize) -> Vec<f64> {
    let g = h.grid();
    let (r, a) = (g.range_bins, g.angle_bins);
    let mut s = vec![0.0; (r + 1) * (a + 1)];
    for k in 0..r {
        let mut row = 0.0;
        for n in 0..a {
            row += h.get(k, m, n);
            s[(k + 1) * (a + 1) + n + 1] = s[k * (a + 1) + n + 1] + row;
        }
    }
    s
}

fn rect_sum(s: &[f64], a: usize, k0: usize, k1: usize, n0: usize, n1: usize) -> f64 {
    // Inclusive bounds.
    let at = |k: usize, n: usize| s[k * (a + 1) + n];
    at(k1 + 1, n1 + 1) - at(k0, n1 + 1) - at(k1 + 1, n0) + at(k0, n0)
}

/// CA-CFAR using summed-area tables.
pub fn ca_cfar(h: &Heatmap, cfg: &CfarConfig) -> Result<PointCloud> {
    let grid = *h.grid();
    let w = cfg.window(&grid)?;
    let n_train = w.training_cells();
    let alpha = cfg.scale_factor(n_train);
    let (ro, ao) = w.outer;
    let (rg, ag) = w.guard;
    let a = grid.angle_bins;
    let slices: Vec<Vec<Detection>> = (0..grid.doppler_bins)
        .into_par_iter()
        .map(|m| -> Result<Vec<Detection>> {
            let s = integral(h, m);
            let mut out = Vec::new();
            for k in ro..grid.range_bins - ro {
                for n in ao..a - ao {
                    let outer = rect_sum(&s, a, k - ro, k + ro, n - ao, n + ao);
                    let inner = rect_sum(&s, a, k - rg, k + rg, n - ag, n + ag);
                    let noise = (outer - inner) / n_train as f64;
                    let v = h.get(k, m, n);
                    if v > alpha * noise {
                        out.push(detection(&grid, k, m, n, v)?);
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    PointCloud::new(slices.into_iter().flatten().collect())
}

/// Reference CA-CFAR by direct enumeration of every training cell.
pub fn brute_force_cfar_oracle(h: &Heatmap, cfg: &CfarConfig) -> Result<PointCloud> {
    let grid = *h.grid();
    let w = cfg.window(&grid)?;
    let alpha = cfg.scale_factor(w.training_cells());
    let (ro, ao) = (w.outer.0 as isize, w.outer.1 as isize);
    let (rg, ag) = (w.guard.0 as isize, w.guard.1 as isize);
    let mut out = Vec::new();
    for m in 0..grid.doppler_bins {
        for k in 0..grid.range_bins as isize {
            for n in 0..grid.angle_bins as isize {
                let inside = |kk: isize, nn: isize| {
                    kk >= 0 && nn >= 0 && (kk as usize) < grid.range_bins && (nn as usize) < grid.angle_bins
                };
                if !(inside(k - ro, n - ao) && inside(k + ro, n + ao)) {
                    continue;
                }
                let mut sum = 0.0;
                let mut count = 0usize;
                for dk in -ro..=ro {
                    for dn in -ao..=ao {
                        if dk.abs() <= rg && dn.abs() <= ag {
                            continue;
                        }
                        sum += h.get((k + dk) as usize, m, (n + dn) as usize);
                        count += 1;
                    }
                }
                let v = h.get(k as usize, m, n as usize);
                if v > alpha * (sum / count as f64) {
                    out.push(detection(&grid, k as usize, m, n as usize, v)?);
                }
            }
        }
    }
    PointCloud::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row_grid(n: usize) -> HeatmapGrid {
        HeatmapGrid {
            range_bins: n,
            doppler_bins: 1,
            angle_bins: 1,
            ..HeatmapGrid::default()
        }
    }

    fn alpha_four_pfa(n: usize) -> f64 {
        // Solve N (pfa^{−1/N} − 1) = 4.
        (1.0 + 4.0 / n as f64).powf(-(n as f64))
    }

    fn row_cfg() -> CfarConfig {
        CfarConfig {
            guard_cells: PerAxis { range: 1, angle: 0 },
            train_cells: PerAxis { range: 3, angle: 1 },
            pfa: alpha_four_pfa(6),
            axes: CfarAxes::Range,
        }
    }

    #[test]
    fn hand_row_case() {
        let v = vec![1.0, 1.0, 1.0, 1.0, 50.0, 1.0, 1.0, 1.0, 1.0];
        let h = Heatmap::new(row_grid(9), v).unwrap();
        let cfg = row_cfg();
        assert!((cfg.scale_factor(6) - 4.0).abs() < 1e-12);
        for pc in [ca_cfar(&h, &cfg).unwrap(), brute_force_cfar_oracle(&h, &cfg).unwrap()] {
            assert_eq!(pc.points.len(), 1);
            assert_eq!(pc.points[0].intensity, 50.0);
        }
    }

    #[test]
    fn zeros_and_constants_are_empty() {
        let g = HeatmapGrid {
            range_bins: 16,
            doppler_bins: 2,
            angle_bins: 16,
            ..HeatmapGrid::default()
        };
        let cfg = CfarConfig::default();
        assert!(ca_cfar(&Heatmap::zeros(g), &cfg).unwrap().points.is_empty());
        assert!(brute_force_cfar_oracle(&Heatmap::zeros(g), &cfg).unwrap().points.is_empty());
        let c = Heatmap::new(g, vec![3.7; g.len()]).unwrap();
        assert!(ca_cfar(&c, &cfg).unwrap().points.is_empty());
    }

    #[test]
    fn oversized_window_rejected() {
        let g = HeatmapGrid {
            range_bins: 8,
            doppler_bins: 1,
            angle_bins: 8,
            ..HeatmapGrid::default()
        };
        assert!(matches!(ca_cfar(&Heatmap::zeros(g), &CfarConfig::default()), Err(Error::Config(_))));
        let bad = CfarConfig { pfa: 1.0, ..CfarConfig::default() };
        assert!(matches!(ca_cfar(&Heatmap::zeros(HeatmapGrid::default()), &bad), Err(Error::Config(_))));
    }

    fn small_grid() -> HeatmapGrid {
        HeatmapGrid {
            range_bins: 16,
            doppler_bins: 8,
            angle_bins: 8,
            ..HeatmapGrid::default()
        }
    }

    fn arb_heatmap() -> impl Strategy<Value = Heatmap> {
        prop::collection::vec(prop_oneof![3 => 0.0..1.0f64, 1 => 0.0..40.0f64], 16 * 8 * 8)
            .prop_map(|v| Heatmap::new(small_grid(), v).unwrap())
    }

    fn arb_cfg() -> impl Strategy<Value = CfarConfig> {
        (0usize..3, 0usize..2, 1usize..4, 1usize..3, -4.0..-1.0f64, 0usize..3).prop_map(|(gr, ga, tr, ta, lp, ax)| CfarConfig {
            guard_cells: PerAxis { range: gr, angle: ga },
            train_cells: PerAxis { range: tr, angle: ta },
            pfa: 10f64.powf(lp),
            axes: [CfarAxes::RangeAngle, CfarAxes::Range, CfarAxes::Angle][ax],
        })
    }

    proptest! {
        #[test]
        fn sliding_matches_oracle(h in arb_heatmap(), cfg in arb_cfg()) {
            prop_assert_eq!(ca_cfar(&h, &cfg).unwrap(), brute_force_cfar_oracle(&h, &cfg).unwrap());
        }

        #[test]
        fn raising_a_cell_keeps_it(h in arb_heatmap(), cell in 0usize..1024, bump in 0.0..100.0f64) {
            let cfg = CfarConfig {
                guard_cells: PerAxis { range: 1, angle: 1 },
                train_cells: PerAxis { range: 2, angle: 1 },
                ..CfarConfig::default()
            };
            let before = ca_cfar(&h, &cfg).unwrap();
            let (k, m, n) = small_grid().unflatten(cell);
            let want = before.points.iter().any(|p| {
                p.intensity == h.values()[cell] && p.radial_velocity_mps == small_grid().doppler_center(m)
                    && p.position_m == spherical_to_cartesian(small_grid().range_center(k), small_grid().angle_center(n), 0.0).unwrap()
            });
            let mut v = h.values().to_vec();
            v[cell] += bump;
            let after = ca_cfar(&Heatmap::new(small_grid(), v.clone()).unwrap(), &cfg).unwrap();
            if want {
                let kept = after.points.iter().any(|p| p.intensity == v[cell]
                    && p.position_m == spherical_to_cartesian(small_grid().range_center(k), small_grid().angle_center(n), 0.0).unwrap()
                    && p.radial_velocity_mps == small_grid().doppler_center(m));
                prop_assert!(kept);
            }
        }
    }
}

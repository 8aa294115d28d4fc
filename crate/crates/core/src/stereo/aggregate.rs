use rayon::prelude::*;

use super::{CostVolume, DisparityMap, SgmConfig};

/// Path steps `(dx, dy)` in the order their costs are summed. The first four
/// are the axis-aligned paths used when `directions == 4`.
pub fn path_directions(count: usize) -> &'static [(isize, isize)] {
    const ALL: [(isize, isize); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, 1), (1, -1), (-1, -1)];
    match count {
        4 => &ALL[..4],
        _ => &ALL[..],
    }
}

#[inline]
fn step(out: &mut [f32], cost: &[f32], prev: &[f32], prev_min: f32, p1: f32, p2: f32) -> f32 {
    let dc = cost.len();
    let mut best = f32::INFINITY;
    for d in 0..dc {
        let mut m = prev[d].min(prev_min + p2);
        if d > 0 {
            m = m.min(prev[d - 1] + p1);
        }
        if d + 1 < dc {
            m = m.min(prev[d + 1] + p1);
        }
        let v = cost[d] + m - prev_min;
        out[d] = v;
        best = best.min(v);
    }
    best
}

fn min_of(v: &[f32]) -> f32 {
    v.iter().copied().fold(f32::INFINITY, f32::min)
}

/// Path costs along one direction for the whole image, same layout as the volume.
fn path_costs(vol: &CostVolume, (dx, dy): (isize, isize), p1: f32, p2: f32) -> Vec<f32> {
    let (w, h, dc) = (vol.width, vol.height, vol.disparity_count);
    let mut out = vec![0.0f32; w * h * dc];
    if dy == 0 {
        // Rows are independent.
        out.par_chunks_mut(w * dc).enumerate().for_each(|(y, row)| {
            let costs = &vol.costs[y * w * dc..(y + 1) * w * dc];
            let xs: Box<dyn Iterator<Item = usize>> = if dx > 0 { Box::new(0..w) } else { Box::new((0..w).rev()) };
            let mut prev_x: Option<usize> = None;
            let mut prev_min = 0.0f32;
            for x in xs {
                let c = &costs[x * dc..(x + 1) * dc];
                match prev_x {
                    None => {
                        row[x * dc..(x + 1) * dc].copy_from_slice(c);
                        prev_min = min_of(c);
                    }
                    Some(px) => {
                        let (a, b) = row.split_at_mut(x.max(px) * dc);
                        let (cur, prev) = if x > px { (&mut b[..dc], &a[px * dc..(px + 1) * dc]) } else { (&mut a[x * dc..(x + 1) * dc], &b[..dc]) };
                        prev_min = step(cur, c, prev, prev_min, p1, p2);
                    }
                }
                prev_x = Some(x);
            }
        });
        return out;
    }
    let ys: Vec<usize> = if dy > 0 { (0..h).collect() } else { (0..h).rev().collect() };
    let mut prev_row: Option<(Vec<f32>, Vec<f32>)> = None;
    for y in ys {
        let costs = &vol.costs[y * w * dc..(y + 1) * w * dc];
        let mut cur = vec![0.0f32; w * dc];
        let mut mins = vec![0.0f32; w];
        cur.par_chunks_mut(dc).zip(mins.par_iter_mut()).enumerate().for_each(|(x, (l, m))| {
            let c = &costs[x * dc..(x + 1) * dc];
            let px = x as isize - dx;
            match &prev_row {
                Some((prev, prev_mins)) if px >= 0 && px < w as isize => {
                    let px = px as usize;
                    *m = step(l, c, &prev[px * dc..(px + 1) * dc], prev_mins[px], p1, p2);
                }
                _ => {
                    l.copy_from_slice(c);
                    *m = min_of(c);
                }
            }
        });
        out[y * w * dc..(y + 1) * w * dc].copy_from_slice(&cur);
        prev_row = Some((cur, mins));
    }
    out
}

/// Sums the path costs
/// `L_r(p, d) = C(p, d) + min(L_r(p−r, d), L_r(p−r, d±1) + P1, min_k L_r(p−r, k) + P2) − min_k L_r(p−r, k)`
/// over 4 or 8 directions. Paths start fresh at the image border.
pub fn aggregate_costs(vol: &CostVolume, cfg: &SgmConfig) -> CostVolume {
    let dirs = path_directions(cfg.directions);
    let mut sum = vec![0.0f32; vol.costs.len()];
    for &dir in dirs {
        let l = path_costs(vol, dir, cfg.p1, cfg.p2);
        sum.par_iter_mut().zip(l.par_iter()).for_each(|(s, v)| *s += v);
    }
    let mut out = CostVolume::new(vol.width, vol.height, vol.d_min, vol.disparity_count, sum);
    out.invalid_floor = vol.invalid_floor * dirs.len() as f32;
    out
}

/// Winner-take-all over the aggregated volume. Ties go to the smaller
/// disparity; pixels whose best cost reaches the volume's invalid floor are
/// marked invalid.
pub fn select_disparity(vol: &CostVolume, _cfg: &SgmConfig) -> DisparityMap {
    let dc = vol.disparity_count;
    let values: Vec<Option<u16>> = vol
        .costs
        .par_chunks(dc)
        .map(|px| {
            let mut best = 0usize;
            for d in 1..dc {
                if px[d] < px[best] {
                    best = d;
                }
            }
            if px[best] >= vol.invalid_floor || px[best].is_nan() {
                None
            } else {
                Some((vol.d_min + best) as u16)
            }
        })
        .collect();
    DisparityMap::new(vol.width, vol.height, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parallel::WorkerPool;

    fn cfg(p1: f32, p2: f32, dirs: usize, dc: usize) -> SgmConfig {
        SgmConfig { d_min: 0, d_max: dc - 1, window_radius: 0, p1, p2, directions: dirs, ..SgmConfig::default() }
    }

    #[test]
    fn hand_computed_row() {
        // 1x3 image, two disparities, left-to-right path, P1 = 1, P2 = 2.
        let vol = CostVolume::new(3, 1, 0, 2, vec![0.0, 3.0, 4.0, 1.0, 2.0, 2.0]);
        let l = path_costs(&vol, (1, 0), 1.0, 2.0);
        assert_eq!(l, vec![0.0, 3.0, 4.0, 2.0, 3.0, 2.0]);
    }

    /// Unnormalised path cost by enumerating every disparity sequence.
    fn brute_force(costs: &[Vec<f32>], p1: f32, p2: f32) -> Vec<Vec<f32>> {
        let dc = costs[0].len();
        let pen = |a: usize, b: usize| match a.abs_diff(b) {
            0 => 0.0,
            1 => p1,
            _ => p2,
        };
        let mut result = vec![vec![f32::INFINITY; dc]; costs.len()];
        for x in 0..costs.len() {
            let total = dc.pow(x as u32 + 1);
            for code in 0..total {
                let seq: Vec<usize> = (0..=x).map(|k| (code / dc.pow(k as u32)) % dc).collect();
                let mut e = costs[0][seq[0]];
                for k in 1..=x {
                    e += costs[k][seq[k]] + pen(seq[k], seq[k - 1]);
                }
                let d = seq[x];
                result[x][d] = result[x][d].min(e);
            }
        }
        result
    }

    #[test]
    fn matches_path_enumeration() {
        let costs: Vec<Vec<f32>> = vec![
            vec![5.0, 1.0, 7.0, 2.0],
            vec![3.0, 6.0, 0.0, 4.0],
            vec![2.0, 9.0, 8.0, 1.0],
            vec![4.0, 4.0, 3.0, 6.0],
            vec![0.0, 7.0, 5.0, 5.0],
        ];
        let (p1, p2) = (1.5, 4.0);
        let flat: Vec<f32> = costs.iter().flatten().copied().collect();
        let vol = CostVolume::new(5, 1, 0, 4, flat);
        let l = path_costs(&vol, (1, 0), p1, p2);
        let raw = brute_force(&costs, p1, p2);
        // The recursion subtracts the running minima of the previous positions.
        let mut offset = 0.0f32;
        for x in 0..5 {
            for d in 0..4 {
                assert!((l[x * 4 + d] - (raw[x][d] - offset)).abs() < 1e-4, "x={x} d={d}");
            }
            offset += l[x * 4..x * 4 + 4].iter().copied().fold(f32::INFINITY, f32::min);
        }
    }

    #[test]
    fn single_pixel_scales_by_direction_count() {
        let vol = CostVolume::new(1, 1, 0, 3, vec![2.0, 0.5, 9.0]);
        for dirs in [4, 8] {
            let s = aggregate_costs(&vol, &cfg(1.0, 2.0, dirs, 3));
            let want: Vec<f32> = vol.costs.iter().map(|c| c * dirs as f32).collect();
            assert_eq!(s.costs, want);
        }
    }

    #[test]
    fn path_cost_not_below_raw_cost() {
        let mut costs = Vec::new();
        for i in 0..7 * 5 * 6 {
            costs.push(((i * 7919) % 31) as f32);
        }
        let vol = CostVolume::new(7, 5, 0, 6, costs);
        for &dir in path_directions(8) {
            let l = path_costs(&vol, dir, 3.0, 10.0);
            for (a, c) in l.iter().zip(&vol.costs) {
                assert!(a >= c);
            }
        }
    }

    fn argmin(v: &[f32]) -> usize {
        (0..v.len()).fold(0, |b, d| if v[d] < v[b] { d } else { b })
    }

    #[test]
    fn vanishing_penalties_reduce_to_pixelwise_argmin() {
        let mut costs = Vec::new();
        for i in 0..9 * 6 {
            costs.push(((i * 104_729) % 97) as f32 + (i % 6) as f32 * 0.01);
        }
        let vol = CostVolume::new(9, 1, 0, 6, costs);
        let l = path_costs(&vol, (1, 0), 1e-6, 1e-6);
        for x in 0..9 {
            assert_eq!(argmin(&l[x * 6..x * 6 + 6]), argmin(vol.pixel(x, 0)));
        }
    }

    #[test]
    fn huge_penalties_keep_disparity_constant_along_path() {
        let mut costs = Vec::new();
        for i in 0..8 * 5 {
            costs.push(((i * 7907) % 53) as f32);
        }
        let vol = CostVolume::new(8, 1, 0, 5, costs);
        let l = path_costs(&vol, (1, 0), 1e7, 1e7);
        for x in 0..8 {
            let cumulative: Vec<f32> = (0..5).map(|d| (0..=x).map(|k| vol.at(k, 0, d)).sum()).collect();
            assert_eq!(argmin(&l[x * 5..x * 5 + 5]), argmin(&cumulative));
        }
    }

    #[test]
    fn winner_take_all_ties_and_invalid() {
        let mut vol = CostVolume::new(3, 1, 2, 3, vec![1.0, 1.0, 2.0, 5.0, 0.0, 0.0, 9.0, 9.0, 9.0]);
        vol.invalid_floor = 9.0;
        let dm = select_disparity(&vol, &SgmConfig::default());
        assert_eq!(dm.get(0, 0), Some(2));
        assert_eq!(dm.get(1, 0), Some(3));
        assert_eq!(dm.get(2, 0), None);
    }

    #[test]
    fn argmin_examples() {
        let vol = CostVolume::new(2, 1, 4, 3, vec![3.0, 1.0, 2.0, 1.0, 1.0, 5.0]);
        let dm = select_disparity(&vol, &SgmConfig::default());
        assert_eq!(dm.get(0, 0), Some(5));
        assert_eq!(dm.get(1, 0), Some(4));
    }

    #[test]
    fn flat_minimum_survives_smoothing() {
        // Every pixel shares the same cost curve.
        let curve = [7.0f32, 2.0, 4.0, 9.0, 3.0];
        let costs: Vec<f32> = (0..6 * 4).flat_map(|_| curve).collect();
        let vol = CostVolume::new(6, 4, 0, 5, costs);
        let s = aggregate_costs(&vol, &cfg(2.0, 6.0, 8, 5));
        let dm = select_disparity(&s, &SgmConfig::default());
        assert!(dm.values().iter().all(|d| *d == Some(1)));
    }

    #[test]
    fn infinite_costs_never_chosen() {
        let vol = CostVolume::new(1, 1, 0, 3, vec![f32::INFINITY, 4.0, f32::INFINITY]);
        assert_eq!(select_disparity(&vol, &SgmConfig::default()).get(0, 0), Some(1));
        let all_inf = CostVolume::new(1, 1, 0, 2, vec![f32::INFINITY; 2]);
        assert_eq!(select_disparity(&all_inf, &SgmConfig::default()).get(0, 0), None);
    }

    #[test]
    fn aggregation_independent_of_pool_size() {
        let mut costs = Vec::new();
        for i in 0..33 * 21 * 9 {
            costs.push(((i * 48_271) % 1009) as f32 * 0.37);
        }
        let vol = CostVolume::new(33, 21, 0, 9, costs);
        let c = cfg(5.0, 40.0, 8, 9);
        let a = WorkerPool::new(1).install(|| aggregate_costs(&vol, &c));
        let b = WorkerPool::new(3).install(|| aggregate_costs(&vol, &c));
        assert!(a.costs.iter().zip(&b.costs).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn diagonal_paths_restart_at_border() {
        let vol = CostVolume::new(4, 3, 0, 2, (0..24).map(|i| i as f32).collect());
        let l = path_costs(&vol, (1, 1), 1.0, 2.0);
        // First row and first column have no predecessor on a (1,1) path.
        for x in 0..4 {
            assert_eq!(&l[x * 2..x * 2 + 2], vol.pixel(x, 0));
        }
        for y in 0..3 {
            assert_eq!(&l[y * 8..y * 8 + 2], vol.pixel(0, y));
        }
    }
}

//! Two interlocking half-moons with four downstream classes, evaluation
//! grids and stratified splits.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{streams, Rng};

pub const NUM_CLASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoonParams {
    pub n: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for MoonParams {
    fn default() -> Self {
        MoonParams { n: 1000, noise_std: 0.1, seed: 0 }
    }
}

impl MoonParams {
    pub fn validate(&self) -> Result<()> {
        if self.n < 4 || !self.n.is_multiple_of(2) {
            return Err(Error::param(format!("moon sample count must be even and at least 4, got {}", self.n)));
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(Error::param(format!("noise_std must be finite and >= 0, got {}", self.noise_std)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// n×2 coordinates.
    pub points: Matrix,
    /// 0 for the upper crescent, 1 for the lower one.
    pub moon: Vec<u8>,
    /// `2·moon + [t ≥ π/2]`.
    pub quadrant: Vec<u8>,
    /// Arc parameter in `[0, π]` the point was generated from.
    pub t_param: Vec<f64>,
}

/// Noise-free position on a moon's arc.
pub fn arc_point(moon: u8, t: f64) -> [f64; 2] {
    match moon {
        0 => [t.cos(), t.sin()],
        _ => [1.0 - t.cos(), 0.5 - t.sin()],
    }
}

pub fn quadrant_label(moon: u8, t: f64) -> u8 {
    2 * moon + u8::from(t >= FRAC_PI_2)
}

pub fn make_moons(params: &MoonParams) -> Result<Dataset> {
    params.validate()?;
    let mut rng = Rng::substream(params.seed, streams::DATA);
    let half = params.n / 2;
    let mut coords = Vec::with_capacity(params.n * 2);
    let mut moon = Vec::with_capacity(params.n);
    let mut quadrant = Vec::with_capacity(params.n);
    let mut t_param = Vec::with_capacity(params.n);
    for m in [0u8, 1u8] {
        for _ in 0..half {
            let t = rng.uniform(0.0, PI);
            let [x, y] = arc_point(m, t);
            let (dx, dy) = if params.noise_std > 0.0 {
                (params.noise_std * rng.normal(), params.noise_std * rng.normal())
            } else {
                (0.0, 0.0)
            };
            coords.extend_from_slice(&[x + dx, y + dy]);
            moon.push(m);
            quadrant.push(quadrant_label(m, t));
            t_param.push(t);
        }
    }
    Ok(Dataset { points: Matrix::from_vec(params.n, 2, coords)?, moon, quadrant, t_param })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> Vec<usize> {
        self.quadrant.iter().map(|&q| q as usize).collect()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for &q in &self.quadrant {
            counts[q as usize] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            points: self.points.select_rows(indices),
            moon: indices.iter().map(|&i| self.moon[i]).collect(),
            quadrant: indices.iter().map(|&i| self.quadrant[i]).collect(),
            t_param: indices.iter().map(|&i| self.t_param[i]).collect(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            writeln!(w, "x,y,moon,quadrant,t")?;
            for i in 0..self.len() {
                let p = self.points.row(i);
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    fmt_f64(p[0]),
                    fmt_f64(p[1]),
                    self.moon[i],
                    self.quadrant[i],
                    fmt_f64(self.t_param[i])
                )?;
            }
            w.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Dataset> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let bad = |reason: String| Error::Format { path: path.to_path_buf(), reason };
        let mut lines = BufReader::new(file).lines();
        let header = lines.next().transpose().map_err(|e| Error::io(path, e))?;
        if header.as_deref() != Some("x,y,moon,quadrant,t") {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        let (mut coords, mut moon, mut quadrant, mut t_param) = (vec![], vec![], vec![], vec![]);
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(bad(format!("line {}: expected 5 fields", lineno + 2)));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("line {}: {e}", lineno + 2)));
            let int = |s: &str| s.parse::<u8>().map_err(|e| bad(format!("line {}: {e}", lineno + 2)));
            coords.push(num(fields[0])?);
            coords.push(num(fields[1])?);
            moon.push(int(fields[2])?);
            quadrant.push(int(fields[3])?);
            t_param.push(num(fields[4])?);
        }
        let n = moon.len();
        Ok(Dataset { points: Matrix::from_vec(n, 2, coords)?, moon, quadrant, t_param })
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Evenly spaced `resolution × resolution` lattice over the closed ranges,
/// x-major: row `i·resolution + j` is `(x_i, y_j)`.
pub fn make_grid(x_range: (f64, f64), y_range: (f64, f64), resolution: usize) -> Result<Matrix> {
    if resolution < 2 {
        return Err(Error::param(format!("grid resolution must be at least 2, got {resolution}")));
    }
    for (name, (lo, hi)) in [("x", x_range), ("y", y_range)] {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::param(format!("degenerate {name} interval [{lo}, {hi}]")));
        }
    }
    let axis = |(lo, hi): (f64, f64), k: usize| {
        if k + 1 == resolution {
            hi
        } else {
            lo + (hi - lo) * k as f64 / (resolution - 1) as f64
        }
    };
    let mut data = Vec::with_capacity(resolution * resolution * 2);
    for i in 0..resolution {
        for j in 0..resolution {
            data.push(axis(x_range, i));
            data.push(axis(y_range, j));
        }
    }
    Matrix::from_vec(resolution * resolution, 2, data)
}

/// Stratified train/test indices, each sorted ascending.
///
/// Per class the train share is allocated by largest remainder, so the total
/// train size is `round(fraction · n)` and every class is within one sample of
/// its exact proportional share.
pub fn split_indices(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::param(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let n = dataset.len();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, &q) in dataset.quadrant.iter().enumerate() {
        by_class[q as usize].push(i);
    }
    let exact: Vec<f64> = by_class.iter().map(|c| train_fraction * c.len() as f64).collect();
    let mut take: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let target = (train_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..NUM_CLASSES).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut missing = target.saturating_sub(take.iter().sum());
    for &c in order.iter().cycle().take(NUM_CLASSES * 2) {
        if missing == 0 {
            break;
        }
        if take[c] < by_class[c].len() && (take[c] as f64) < exact[c].ceil() {
            take[c] += 1;
            missing -= 1;
        }
    }

    let mut rng = Rng::substream(seed, streams::SPLIT);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (class, members) in by_class.iter_mut().enumerate() {
        rng.shuffle(members);
        train.extend_from_slice(&members[..take[class]]);
        test.extend_from_slice(&members[take[class]..]);
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::param(format!("split of {n} points at fraction {train_fraction} leaves an empty side")));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(dataset, train_fraction, seed)?;
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless(n: usize) -> Dataset {
        make_moons(&MoonParams { n, noise_std: 0.0, seed: 3 }).unwrap()
    }

    #[test]
    fn arc_endpoints() {
        let [x, y] = arc_point(0, 0.0);
        assert_eq!((x, y), (1.0, 0.0));
        let [x, y] = arc_point(1, FRAC_PI_2);
        assert!((x - 1.0).abs() < 1e-15 && (y + 0.5).abs() < 1e-15);
    }

    #[test]
    fn noiseless_points_sit_on_their_arc() {
        let d = noiseless(200);
        for i in 0..d.len() {
            let [x, y] = arc_point(d.moon[i], d.t_param[i]);
            assert_eq!(d.points.row(i), &[x, y]);
        }
    }

    #[test]
    fn labels_follow_moon_and_parameter() {
        let d = make_moons(&MoonParams { n: 400, noise_std: 0.3, seed: 8 }).unwrap();
        assert_eq!(d.moon.iter().filter(|&&m| m == 0).count(), 200);
        for i in 0..d.len() {
            assert_eq!(d.quadrant[i], quadrant_label(d.moon[i], d.t_param[i]));
            assert!((0.0..=PI).contains(&d.t_param[i]));
        }
    }

    #[test]
    fn class_balance_at_default_size() {
        for seed in 0..20 {
            let d = make_moons(&MoonParams { n: 1000, noise_std: 0.1, seed }).unwrap();
            for c in d.class_counts() {
                assert!((200..=300).contains(&c), "seed {seed}: {c}");
            }
        }
    }

    #[test]
    fn arcs_never_touch() {
        let ts: Vec<f64> = (0..=2000).map(|k| PI * k as f64 / 2000.0).collect();
        let mut min = f64::INFINITY;
        for &a in &ts {
            let p = arc_point(0, a);
            for &b in &ts {
                let q = arc_point(1, b);
                min = min.min(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt());
            }
        }
        assert!(min > 0.4, "min arc distance {min}");
    }

    #[test]
    fn rejects_bad_params() {
        for n in [0, 2, 7] {
            assert!(matches!(make_moons(&MoonParams { n, noise_std: 0.1, seed: 0 }), Err(Error::Parameter(_))));
        }
        assert!(make_moons(&MoonParams { n: 10, noise_std: f64::NAN, seed: 0 }).is_err());
    }

    #[test]
    fn determinism() {
        let p = MoonParams { n: 100, noise_std: 0.1, seed: 77 };
        assert_eq!(make_moons(&p).unwrap(), make_moons(&p).unwrap());
    }

    #[test]
    fn grid_layouts() {
        let g = make_grid((0.0, 1.0), (0.0, 1.0), 2).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        let g = make_grid((-1.0, 1.0), (0.0, 0.5), 3).unwrap();
        assert_eq!(g.rows(), 9);
        let xs: Vec<f64> = (0..9).map(|r| g[(r, 0)]).collect();
        assert_eq!(xs, vec![-1.0, -1.0, -1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(make_grid((0.0, 1.0), (0.0, 1.0), 100).unwrap().rows(), 10_000);
        assert!(make_grid((1.0, 1.0), (0.0, 1.0), 5).is_err());
        assert!(make_grid((0.0, 1.0), (0.0, 1.0), 1).is_err());
    }

    #[test]
    fn split_is_stratified_disjoint_and_deterministic() {
        let d = make_moons(&MoonParams { n: 1000, noise_std: 0.1, seed: 4 }).unwrap();
        let (train, test) = split_indices(&d, 0.5, 9).unwrap();
        assert_eq!((train.len(), test.len()), (500, 500));
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        let (a, b) = (d.subset(&train).class_counts(), d.subset(&test).class_counts());
        for c in 0..NUM_CLASSES {
            assert!(a[c].abs_diff(b[c]) <= 1, "class {c}: {} vs {}", a[c], b[c]);
        }
        assert_eq!(split_indices(&d, 0.5, 9).unwrap(), (train, test));
        assert_ne!(split_indices(&d, 0.5, 10).unwrap().0, split_indices(&d, 0.5, 9).unwrap().0);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let d = noiseless(20);
        for f in [0.0, 1.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(split(&d, f, 0), Err(Error::Parameter(_))));
        }
    }

    #[test]
    fn csv_round_trip() {
        let d = make_moons(&MoonParams { n: 50, noise_std: 0.1, seed: 1 }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        d.write_csv(&path).unwrap();
        assert_eq!(Dataset::read_csv(&path).unwrap(), d);
    }
}

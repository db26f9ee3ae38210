use rand::Rng;

use super::FeatureSequence;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MAX_ITERATIONS: usize = 300;
pub const REL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub centroids: Matrix,
}

impl Codebook {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    /// Index and squared distance of the closest centroid.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (j, c) in self.centroids.iter_rows().enumerate() {
            let d = sq_dist(x, c);
            if d < best.1 {
                best = (j, d);
            }
        }
        best
    }
}

/// Lloyd objective after each assignment step.
#[derive(Debug, Clone, Default)]
pub struct KmeansTrace {
    pub objectives: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn kmeans_fit<R: Rng + ?Sized>(points: &Matrix, k: usize, rng: &mut R) -> Result<Codebook> {
    kmeans_fit_traced(points, k, rng).map(|(cb, _)| cb)
}

/// K-means++ seeding followed by Lloyd iterations.
///
/// Stops after [`MAX_ITERATIONS`] or once the objective changes by less than
/// [`REL_TOLERANCE`] relative. An empty cluster is re-seeded with the point
/// farthest from its assigned centroid.
pub fn kmeans_fit_traced<R: Rng + ?Sized>(
    points: &Matrix,
    k: usize,
    rng: &mut R,
) -> Result<(Codebook, KmeansTrace)> {
    let n = points.rows();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if n < k {
        return Err(Error::InvalidArgument(format!(
            "{n} points cannot fill {k} clusters"
        )));
    }
    if !points.is_finite() {
        return Err(Error::InvalidArgument("non-finite feature".into()));
    }
    let dim = points.cols();

    // k-means++ seeding
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points
        .iter_rows()
        .map(|p| sq_dist(p, points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "fewer than {k} distinct points"
            )));
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        // rounding can leave target just past the last positive weight
        if d2[pick] == 0.0 {
            pick = d2
                .iter()
                .rposition(|&d| d > 0.0)
                .expect("positive total implies a positive weight");
        }
        chosen.push(pick);
        for (i, p) in points.iter_rows().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, points.row(pick)));
        }
    }
    let mut centroids = points.select_rows(&chosen);

    let mut assign = vec![0usize; n];
    let mut dist = vec![0.0; n];
    let mut trace = KmeansTrace::default();
    for _ in 0..MAX_ITERATIONS {
        let cb = Codebook { centroids };
        for (i, p) in points.iter_rows().enumerate() {
            let (j, d) = cb.nearest(p);
            assign[i] = j;
            dist[i] = d;
        }
        centroids = cb.centroids;
        let objective: f64 = dist.iter().sum();
        let converged = trace.objectives.last().is_some_and(|&prev: &f64| {
            prev - objective <= REL_TOLERANCE * prev.max(f64::MIN_POSITIVE)
        });
        trace.objectives.push(objective);
        if converged || objective == 0.0 {
            break;
        }

        let mut sums = Matrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter_rows().enumerate() {
            counts[assign[i]] += 1;
            for (s, v) in sums.row_mut(assign[i]).iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let c = counts[j] as f64;
                for (dst, s) in centroids.row_mut(j).iter_mut().zip(sums.row(j)) {
                    *dst = s / c;
                }
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                let far = dist
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                centroids.row_mut(j).copy_from_slice(points.row(far));
                dist[far] = 0.0;
            }
        }
    }
    Ok((Codebook { centroids }, trace))
}

/// Replaces every frame by its nearest centroid vector.
pub fn quantize_continuous(features: &FeatureSequence, cb: &Codebook) -> Result<FeatureSequence> {
    if features.dim() != cb.dim() {
        return Err(Error::Shape(format!(
            "features have dimension {}, codebook {}",
            features.dim(),
            cb.dim()
        )));
    }
    let rows: Vec<usize> = features
        .frames
        .iter_rows()
        .map(|f| cb.nearest(f).0)
        .collect();
    Ok(FeatureSequence {
        frames: cb.centroids.select_rows(&rows),
        hop: features.hop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn col(v: &[f64]) -> Matrix {
        Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    /// Best 2-partition objective of a 1-D point set by enumeration.
    fn brute_force_two_means(xs: &[f64]) -> (f64, Vec<f64>) {
        let n = xs.len();
        let mut best = (f64::INFINITY, vec![]);
        for mask in 1..(1u32 << n) - 1 {
            let (a, b): (Vec<f64>, Vec<f64>) = (0..n).map(|i| (mask >> i & 1 == 1, xs[i])).fold(
                (vec![], vec![]),
                |(mut a, mut b), (m, x)| {
                    if m {
                        a.push(x)
                    } else {
                        b.push(x)
                    }
                    (a, b)
                },
            );
            let ma = a.iter().sum::<f64>() / a.len() as f64;
            let mb = b.iter().sum::<f64>() / b.len() as f64;
            let obj = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>()
                + b.iter().map(|x| (x - mb).powi(2)).sum::<f64>();
            if obj < best.0 {
                let mut c = vec![ma, mb];
                c.sort_by(f64::total_cmp);
                best = (obj, c);
            }
        }
        best
    }

    #[test]
    fn two_clusters_in_one_dimension() {
        let xs = [0.0, 1.0, 10.0, 11.0];
        let (obj, expected) = brute_force_two_means(&xs);
        assert_eq!(expected, vec![0.5, 10.5]);
        let (cb, trace) =
            kmeans_fit_traced(&col(&xs), 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut got: Vec<f64> = cb.centroids.as_slice().to_vec();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, expected);
        assert_eq!(*trace.objectives.last().unwrap(), obj);
    }

    #[test]
    fn k_equals_n_gives_zero_objective() {
        let xs = [3.0, -1.0, 7.5, 2.0];
        let (cb, trace) =
            kmeans_fit_traced(&col(&xs), 4, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(*trace.objectives.last().unwrap(), 0.0);
        let mut got = cb.centroids.into_vec();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, vec![-1.0, 2.0, 3.0, 7.5]);
    }

    #[test]
    fn too_few_points() {
        assert!(kmeans_fit(&col(&[1.0, 2.0]), 3, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn quantize_examples() {
        let cb = Codebook {
            centroids: col(&[0.5, 10.5]),
        };
        let f = FeatureSequence {
            frames: col(&[0.9, 10.5, 6.0]),
            hop: 256,
        };
        let q = quantize_continuous(&f, &cb).unwrap();
        assert_eq!(q.frames.as_slice(), &[0.5, 10.5, 10.5]);
        assert_eq!(quantize_continuous(&q, &cb).unwrap(), q);

        let wrong = FeatureSequence {
            frames: Matrix::zeros(2, 3),
            hop: 256,
        };
        assert!(quantize_continuous(&wrong, &cb).is_err());
    }

    #[test]
    fn recovers_separated_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut rows = vec![];
        for c in &centers {
            for _ in 0..200 {
                rows.push(vec![
                    c[0] + noise.sample(&mut rng),
                    c[1] + noise.sample(&mut rng),
                ]);
            }
        }
        let pts = Matrix::from_rows(&rows).unwrap();
        let (cb, trace) = kmeans_fit_traced(&pts, 3, &mut rng).unwrap();
        for c in &centers {
            let (_, d) = cb.nearest(c);
            assert!(d.sqrt() < 0.1);
        }
        for w in trace.objectives.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    proptest! {
        #[test]
        fn lloyd_is_monotone_and_deterministic(
            data in prop::collection::vec(-5.0f64..5.0, 40..200),
            k in 1usize..8,
            seed in any::<u64>(),
        ) {
            let pts = Matrix::from_vec(data.len() / 2, 2, data[..data.len() / 2 * 2].to_vec()).unwrap();
            let a = kmeans_fit_traced(&pts, k, &mut ChaCha8Rng::seed_from_u64(seed));
            let b = kmeans_fit_traced(&pts, k, &mut ChaCha8Rng::seed_from_u64(seed));
            if let (Ok((ca, ta)), Ok((cb, _))) = (a, b) {
                prop_assert_eq!(&ca, &cb);
                for w in ta.objectives.windows(2) {
                    prop_assert!(w[1] <= w[0]);
                }
                let f = FeatureSequence { frames: pts.clone(), hop: 1 };
                let q = quantize_continuous(&f, &ca).unwrap();
                for r in q.frames.iter_rows() {
                    prop_assert!(ca.centroids.iter_rows().any(|c| c == r));
                }
                prop_assert_eq!(quantize_continuous(&q, &ca).unwrap(), q);
            }
        }
    }
}

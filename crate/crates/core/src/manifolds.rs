//! Ground-truth manifolds embedded isometrically into R^D.
//!
//! Each manifold lives in a small "native" Euclidean space (R^2 for the
//! circle, R^{d+1} for S^d, R^{m*m} for SO(m) with the Frobenius metric) and
//! is mapped into R^D by a fixed matrix with orthonormal columns. Geometric
//! queries pull a point back into native coordinates, work there, and push
//! the answer forward again; whatever lies outside the embedded subspace is
//! pure normal displacement.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::{dot, norm, PointCloud};
use crate::rng::{substream, Domain, StreamRng};

const ON_MANIFOLD_TOL: f64 = 1e-8;
const TANGENT_TOL: f64 = 1e-8;
const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ManifoldKind {
    Circle,
    /// The unit sphere S^d in R^{d+1}.
    Sphere(usize),
    /// SO(m) with the Frobenius metric, so d = m(m-1)/2.
    SpecialOrthogonal(usize),
}

impl ManifoldKind {
    pub fn intrinsic_dim(&self) -> usize {
        match *self {
            ManifoldKind::Circle => 1,
            ManifoldKind::Sphere(d) => d,
            ManifoldKind::SpecialOrthogonal(m) => m * (m - 1) / 2,
        }
    }

    pub fn native_dim(&self) -> usize {
        match *self {
            ManifoldKind::Circle => 2,
            ManifoldKind::Sphere(d) => d + 1,
            ManifoldKind::SpecialOrthogonal(m) => m * m,
        }
    }

    /// Extrinsic diameter bound: 2 for spheres, 2*sqrt(m) for SO(m).
    pub fn diameter(&self) -> f64 {
        match *self {
            ManifoldKind::Circle | ManifoldKind::Sphere(_) => 2.0,
            ManifoldKind::SpecialOrthogonal(m) => 2.0 * (m as f64).sqrt(),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ManifoldKind::Sphere(0) => {
                Err(Error::Config("sphere dimension must be at least 1".into()))
            }
            ManifoldKind::SpecialOrthogonal(0) => Err(Error::Config("SO(m) needs m >= 1".into())),
            _ => Ok(()),
        }
    }

    pub fn tag(&self) -> (&'static str, usize) {
        match *self {
            ManifoldKind::Circle => ("circle", 1),
            ManifoldKind::Sphere(d) => ("sphere", d),
            ManifoldKind::SpecialOrthogonal(m) => ("special_orthogonal", m),
        }
    }

    pub fn from_tag(kind: &str, m_or_d: usize) -> Result<Self> {
        match kind {
            "circle" => {
                if m_or_d != 1 {
                    return Err(Error::Config(format!(
                        "circle has d = 1, got m_or_d = {m_or_d}"
                    )));
                }
                Ok(ManifoldKind::Circle)
            }
            "sphere" => Ok(ManifoldKind::Sphere(m_or_d)),
            "special_orthogonal" | "so" => Ok(ManifoldKind::SpecialOrthogonal(m_or_d)),
            other => Err(Error::Config(format!("unknown manifold kind `{other}`"))),
        }
    }
}

/// A manifold kind together with its orthogonal embedding into R^D.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ManifoldSpecJson", into = "ManifoldSpecJson")]
pub struct ManifoldSpec {
    kind: ManifoldKind,
    ambient_dim: usize,
    embed_seed: u64,
    embedding: DMatrix<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ManifoldSpecJson {
    kind: String,
    m_or_d: usize,
    #[serde(rename = "D")]
    ambient_dim: usize,
    embed_seed: u64,
}

impl TryFrom<ManifoldSpecJson> for ManifoldSpec {
    type Error = Error;

    fn try_from(j: ManifoldSpecJson) -> Result<Self> {
        ManifoldSpec::new(
            ManifoldKind::from_tag(&j.kind, j.m_or_d)?,
            j.ambient_dim,
            j.embed_seed,
        )
    }
}

impl From<ManifoldSpec> for ManifoldSpecJson {
    fn from(s: ManifoldSpec) -> Self {
        let (kind, m_or_d) = s.kind.tag();
        ManifoldSpecJson {
            kind: kind.to_string(),
            m_or_d,
            ambient_dim: s.ambient_dim,
            embed_seed: s.embed_seed,
        }
    }
}

impl ManifoldSpec {
    pub fn new(kind: ManifoldKind, ambient_dim: usize, embed_seed: u64) -> Result<Self> {
        kind.validate()?;
        let embedding = make_embedding(kind.native_dim(), ambient_dim, embed_seed)?;
        Ok(Self {
            kind,
            ambient_dim,
            embed_seed,
            embedding,
        })
    }

    /// The manifold in its native coordinates (identity embedding, D = native_dim).
    pub fn native(kind: ManifoldKind) -> Result<Self> {
        kind.validate()?;
        let k = kind.native_dim();
        Ok(Self {
            kind,
            ambient_dim: k,
            embed_seed: 0,
            embedding: DMatrix::identity(k, k),
        })
    }

    pub fn kind(&self) -> ManifoldKind {
        self.kind
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.kind.intrinsic_dim()
    }

    pub fn native_dim(&self) -> usize {
        self.kind.native_dim()
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn embed_seed(&self) -> u64 {
        self.embed_seed
    }

    pub fn embedding(&self) -> &DMatrix<f64> {
        &self.embedding
    }

    pub fn diameter(&self) -> f64 {
        self.kind.diameter()
    }

    pub fn embed(&self, native: &[f64]) -> Vec<f64> {
        (&self.embedding * DVector::from_column_slice(native))
            .as_slice()
            .to_vec()
    }

    /// Coordinates of `x` in the embedded subspace.
    pub fn pull_back(&self, x: &[f64]) -> Vec<f64> {
        self.embedding
            .tr_mul(&DVector::from_column_slice(x))
            .as_slice()
            .to_vec()
    }

    fn check_ambient(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.ambient_dim {
            return Err(Error::DimensionMismatch {
                expected: self.ambient_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Split `x` into native coordinates and the squared norm of its
    /// off-subspace residual.
    fn decompose(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let u = self.pull_back(x);
        let back = self.embed(&u);
        let off: f64 = x.iter().zip(&back).map(|(a, b)| (a - b) * (a - b)).sum();
        (u, off)
    }

    /// Draw one point of the native manifold from its uniform / Haar measure.
    fn sample_native(&self, rng: &mut StreamRng) -> Vec<f64> {
        match self.kind {
            ManifoldKind::Circle | ManifoldKind::Sphere(_) => loop {
                let g: Vec<f64> = (0..self.native_dim())
                    .map(|_| rng.sample(StandardNormal))
                    .collect();
                let r = norm(&g);
                if r > 1e-300 {
                    break g.into_iter().map(|v| v / r).collect();
                }
            },
            ManifoldKind::SpecialOrthogonal(m) => mat_to_native(&haar_rotation(m, rng)),
        }
    }
}

/// Row-major flattening of an m x m matrix.
pub fn mat_to_native(q: &DMatrix<f64>) -> Vec<f64> {
    let m = q.nrows();
    let mut v = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            v.push(q[(i, j)]);
        }
    }
    v
}

pub fn native_to_mat(v: &[f64], m: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(m, m, v)
}

/// The n training points together with their provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSet {
    pub points: PointCloud,
    pub spec: ManifoldSpec,
    pub data_seed: u64,
}

impl DataSet {
    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.points.dim()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TangentDecomposition {
    pub base_point: Vec<f64>,
    pub tangent_part: Vec<f64>,
    pub normal_part: Vec<f64>,
}

impl TangentDecomposition {
    pub fn reconstruct(&self) -> Vec<f64> {
        self.tangent_part
            .iter()
            .zip(&self.normal_part)
            .map(|(a, b)| a + b)
            .collect()
    }
}

/// Random D x k matrix with orthonormal columns: thin QR of a Gaussian
/// matrix with the signs of R's diagonal folded into Q.
pub fn make_embedding(native_dim: usize, ambient_dim: usize, seed: u64) -> Result<DMatrix<f64>> {
    if native_dim == 0 {
        return Err(Error::Config("native dimension must be positive".into()));
    }
    if ambient_dim < native_dim {
        return Err(Error::Config(format!(
            "ambient dimension {ambient_dim} is smaller than native dimension {native_dim}"
        )));
    }
    let mut rng = substream(seed, Domain::Embedding, 0);
    let mut g = DMatrix::<f64>::zeros(ambient_dim, native_dim);
    for i in 0..ambient_dim {
        for j in 0..native_dim {
            g[(i, j)] = rng.sample(StandardNormal);
        }
    }
    Ok(sign_corrected_q(g))
}

fn sign_corrected_q(g: DMatrix<f64>) -> DMatrix<f64> {
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..q.ncols() {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Haar-distributed element of SO(m).
pub fn haar_rotation(m: usize, rng: &mut StreamRng) -> DMatrix<f64> {
    let mut g = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            g[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let mut q = sign_corrected_q(g);
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    q
}

/// n i.i.d. uniform (Haar for SO(m)) points, embedded into R^D.
///
/// Point `i` is drawn from its own stream so the result does not depend on
/// thread scheduling.
pub fn sample_manifold(spec: &ManifoldSpec, n: usize, seed: u64) -> Result<DataSet> {
    if n == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, Domain::Data, i as u64);
            spec.embed(&spec.sample_native(&mut rng))
        })
        .collect();
    let points = PointCloud::from_rows(spec.ambient_dim(), rows)?;
    Ok(DataSet {
        points,
        spec: spec.clone(),
        data_seed: seed,
    })
}

fn project_native(kind: ManifoldKind, u: &[f64]) -> Result<Vec<f64>> {
    match kind {
        ManifoldKind::Circle | ManifoldKind::Sphere(_) => {
            let r = norm(u);
            if r < DEGENERATE_NORM {
                return Err(Error::DegenerateProjection(format!(
                    "radial projection of a point with norm {r:e}"
                )));
            }
            Ok(u.iter().map(|v| v / r).collect())
        }
        ManifoldKind::SpecialOrthogonal(m) => {
            Ok(mat_to_native(&nearest_rotation(&native_to_mat(u, m))?))
        }
    }
}

/// Polar factor of `a` restricted to det = +1.
fn nearest_rotation(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = a.nrows();
    let svd = a.clone().svd(true, true);
    let (mut u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let s = &svd.singular_values;
    let scale = s.max().max(1.0);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| s[i].total_cmp(&s[j]));
    let smallest = order[0];
    let mut r = &u * &v_t;
    if r.determinant() < 0.0 {
        // Uniqueness needs the two smallest singular values to be separated.
        if m >= 2 && (s[order[1]] - s[smallest]) <= 1e-12 * scale {
            return Err(Error::DegenerateProjection(
                "singular value tie makes the nearest rotation non-unique".into(),
            ));
        }
        u.column_mut(smallest).neg_mut();
        r = &u * &v_t;
    } else if m >= 2 && s[order[0]] + s[order[1]] <= 1e-12 * scale {
        return Err(Error::DegenerateProjection(
            "rank-deficient input has no unique nearest rotation".into(),
        ));
    } else if m == 1 && s[0] < DEGENERATE_NORM {
        return Err(Error::DegenerateProjection("zero 1x1 matrix".into()));
    }
    Ok(r)
}

/// Euclidean-nearest point of the embedded manifold.
pub fn project_to_manifold(x: &[f64], spec: &ManifoldSpec) -> Result<Vec<f64>> {
    spec.check_ambient(x)?;
    let u = spec.pull_back(x);
    Ok(spec.embed(&project_native(spec.kind(), &u)?))
}

pub fn distance_to_manifold(x: &[f64], spec: &ManifoldSpec) -> Result<f64> {
    spec.check_ambient(x)?;
    let (u, off_sq) = spec.decompose(x);
    let p = project_native(spec.kind(), &u)?;
    let in_sq: f64 = u.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((in_sq + off_sq).sqrt())
}

/// Orthogonal projection of a native vector onto the tangent space at a
/// native base point.
fn tangent_project_native(kind: ManifoldKind, base: &[f64], v: &[f64]) -> Vec<f64> {
    match kind {
        ManifoldKind::Circle | ManifoldKind::Sphere(_) => {
            let c = dot(base, v);
            v.iter().zip(base).map(|(vi, bi)| vi - c * bi).collect()
        }
        ManifoldKind::SpecialOrthogonal(m) => {
            let q = native_to_mat(base, m);
            let a = q.tr_mul(&native_to_mat(v, m));
            let skew = (&a - a.transpose()) * 0.5;
            mat_to_native(&(q * skew))
        }
    }
}

fn require_on_manifold(x: &[f64], spec: &ManifoldSpec) -> Result<()> {
    let distance = distance_to_manifold(x, spec)?;
    if distance > ON_MANIFOLD_TOL {
        return Err(Error::OffManifold { distance });
    }
    Ok(())
}

/// Orthogonal projection of an ambient vector onto T_base M (embedded in R^D).
pub fn tangent_projection(base: &[f64], v: &[f64], spec: &ManifoldSpec) -> Result<Vec<f64>> {
    spec.check_ambient(base)?;
    spec.check_ambient(v)?;
    let b = spec.pull_back(base);
    let u = spec.pull_back(v);
    Ok(spec.embed(&tangent_project_native(spec.kind(), &b, &u)))
}

/// Geodesic exponential map exp_base(tangent).
pub fn exp_map(base: &[f64], tangent: &[f64], spec: &ManifoldSpec) -> Result<Vec<f64>> {
    spec.check_ambient(tangent)?;
    require_on_manifold(base, spec)?;
    let proj = tangent_projection(base, tangent, spec)?;
    let normal_norm = tangent
        .iter()
        .zip(&proj)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if normal_norm > TANGENT_TOL * norm(tangent).max(1.0) {
        return Err(Error::InvalidTangent { normal_norm });
    }
    let b = spec.pull_back(base);
    let v = spec.pull_back(&proj);
    let out = match spec.kind() {
        ManifoldKind::Circle | ManifoldKind::Sphere(_) => {
            let len = norm(&v);
            if len == 0.0 {
                b
            } else {
                let (s, c) = len.sin_cos();
                b.iter()
                    .zip(&v)
                    .map(|(bi, vi)| c * bi + s * vi / len)
                    .collect()
            }
        }
        ManifoldKind::SpecialOrthogonal(m) => {
            let q = native_to_mat(&b, m);
            let a = q.tr_mul(&native_to_mat(&v, m));
            mat_to_native(&(&q * a.exp()))
        }
    };
    Ok(spec.embed(&out))
}

/// Draw xi ~ N(0, I_D) and split it into its T_base M and normal components.
pub fn split_gaussian_noise(
    base: &[f64],
    spec: &ManifoldSpec,
    seed: u64,
) -> Result<TangentDecomposition> {
    require_on_manifold(base, spec)?;
    let mut rng = substream(seed, Domain::Tangent, 0);
    let xi: Vec<f64> = (0..spec.ambient_dim())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let tangent_part = tangent_projection(base, &xi, spec)?;
    let normal_part = xi.iter().zip(&tangent_part).map(|(a, b)| a - b).collect();
    Ok(TangentDecomposition {
        base_point: base.to_vec(),
        tangent_part,
        normal_part,
    })
}

/// Checks that every row of a data set lies on its manifold.
pub fn max_manifold_residual(data: &DataSet) -> Result<f64> {
    data.points
        .rows()
        .map(|r| distance_to_manifold(r, &data.spec))
        .try_fold(0.0f64, |acc, d| d.map(|d| acc.max(d)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const ORTHONORMAL_TOL: f64 = 1e-12;

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn embedding_is_orthonormal_and_deterministic() {
        let e = make_embedding(16, 50, 11).unwrap();
        let gram = e.tr_mul(&e);
        let err = (&gram - DMatrix::<f64>::identity(16, 16)).amax();
        assert!(err < ORTHONORMAL_TOL, "gram error {err}");
        let again = make_embedding(16, 50, 11).unwrap();
        assert_eq!(e.as_slice(), again.as_slice());
    }

    #[test]
    fn square_embedding_has_unit_determinant() {
        let e = make_embedding(16, 16, 3).unwrap();
        assert!((e.determinant().abs() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn embedding_rejects_small_ambient() {
        assert!(matches!(make_embedding(16, 15, 0), Err(Error::Config(_))));
        assert!(ManifoldSpec::new(ManifoldKind::SpecialOrthogonal(4), 10, 0).is_err());
    }

    #[test]
    fn so4_dimensions() {
        let k = ManifoldKind::SpecialOrthogonal(4);
        assert_eq!(k.intrinsic_dim(), 6);
        assert_eq!(k.native_dim(), 16);
    }

    #[test]
    fn circle_samples_have_unit_norm() {
        let spec = ManifoldSpec::new(ManifoldKind::Circle, 5, 1).unwrap();
        let data = sample_manifold(&spec, 70, 42).unwrap();
        assert_eq!(data.n(), 70);
        for r in data.points.rows() {
            assert!((norm(&spec.pull_back(r)) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn so1_is_a_single_point() {
        let spec = ManifoldSpec::native(ManifoldKind::SpecialOrthogonal(1)).unwrap();
        let data = sample_manifold(&spec, 5, 9).unwrap();
        for r in data.points.rows() {
            assert_eq!(r, &[1.0]);
        }
    }

    #[test]
    fn so_samples_are_rotations() {
        let spec = ManifoldSpec::new(ManifoldKind::SpecialOrthogonal(4), 50, 2).unwrap();
        let data = sample_manifold(&spec, 50, 5).unwrap();
        for r in data.points.rows() {
            let q = native_to_mat(&spec.pull_back(r), 4);
            assert!((q.tr_mul(&q) - DMatrix::<f64>::identity(4, 4)).amax() < 1e-10);
            assert!((q.determinant() - 1.0).abs() < 1e-10);
        }
        assert!(max_manifold_residual(&data).unwrap() < 1e-10);
    }

    #[test]
    fn projection_examples() {
        let spec = ManifoldSpec::native(ManifoldKind::Circle).unwrap();
        assert_eq!(
            project_to_manifold(&[2.0, 0.0], &spec).unwrap(),
            vec![1.0, 0.0]
        );
        assert!((distance_to_manifold(&[3.0, 0.0], &spec).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(
            project_to_manifold(&[0.0, 0.0], &spec),
            Err(Error::DegenerateProjection(_))
        ));
    }

    #[test]
    fn projection_is_idempotent_on_so4() {
        let spec = ManifoldSpec::new(ManifoldKind::SpecialOrthogonal(4), 30, 8).unwrap();
        let mut rng = substream(1, Domain::Noise, 0);
        for _ in 0..20 {
            let x: Vec<f64> = (0..30)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let p = project_to_manifold(&x, &spec).unwrap();
            let pp = project_to_manifold(&p, &spec).unwrap();
            assert!(max_abs_diff(&p, &pp) < 1e-10);
            assert!(distance_to_manifold(&p, &spec).unwrap() < 1e-10);
        }
    }

    #[test]
    fn so2_projection_matches_angle_grid() {
        let spec = ManifoldSpec::native(ManifoldKind::SpecialOrthogonal(2)).unwrap();
        let a = [0.9, -0.5, 0.3, 1.2];
        let p = project_to_manifold(&a, &spec).unwrap();
        // Grid search over rotation angles.
        let grid = 1_000_000;
        let (mut best, mut best_theta) = (f64::INFINITY, 0.0);
        for k in 0..grid {
            let th = 2.0 * PI * k as f64 / grid as f64;
            let (s, c) = th.sin_cos();
            let r = [c, -s, s, c];
            let d: f64 = r.iter().zip(&a).map(|(x, y)| (x - y) * (x - y)).sum();
            if d < best {
                best = d;
                best_theta = th;
            }
        }
        let (s, c) = f64::sin_cos(best_theta);
        assert!(max_abs_diff(&p, &[c, -s, s, c]) < 1e-5);
        let dist = distance_to_manifold(&a, &spec).unwrap();
        assert!((dist - best.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn projection_flips_reflections_to_rotations() {
        let spec = ManifoldSpec::native(ManifoldKind::SpecialOrthogonal(3)).unwrap();
        let refl = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -0.5];
        let p = project_to_manifold(&refl, &spec).unwrap();
        assert!(max_abs_diff(&p, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]) < 1e-12);
        let tie = [1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0];
        // det = +1 here, so it is already a rotation.
        assert!(project_to_manifold(&tie, &spec).is_ok());
        let bad_tie = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0];
        assert!(matches!(
            project_to_manifold(&bad_tie, &spec),
            Err(Error::DegenerateProjection(_))
        ));
    }

    #[test]
    fn exp_map_identity_and_half_turn() {
        let spec = ManifoldSpec::native(ManifoldKind::Circle).unwrap();
        assert_eq!(
            exp_map(&[1.0, 0.0], &[0.0, 0.0], &spec).unwrap(),
            vec![1.0, 0.0]
        );
        let out = exp_map(&[1.0, 0.0], &[0.0, PI], &spec).unwrap();
        assert!(max_abs_diff(&out, &[-1.0, 0.0]) < 1e-10);
        assert!(matches!(
            exp_map(&[1.0, 0.0], &[0.5, 0.0], &spec),
            Err(Error::InvalidTangent { .. })
        ));
        assert!(matches!(
            exp_map(&[2.0, 0.0], &[0.0, 0.1], &spec),
            Err(Error::OffManifold { .. })
        ));
    }

    #[test]
    fn exp_map_on_so3_rotates_by_tangent_length() {
        let spec = ManifoldSpec::new(ManifoldKind::SpecialOrthogonal(3), 12, 4).unwrap();
        let base = sample_manifold(&spec, 1, 3).unwrap().points.row(0).to_vec();
        let mut rng = substream(5, Domain::Noise, 0);
        for _ in 0..10 {
            let raw: Vec<f64> = (0..12)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let v = tangent_projection(&base, &raw, &spec).unwrap();
            let out = exp_map(&base, &v, &spec).unwrap();
            assert!(distance_to_manifold(&out, &spec).unwrap() < 1e-10);
            // Frobenius length rho of a skew generator rotates by rho / sqrt(2).
            let q0 = native_to_mat(&spec.pull_back(&base), 3);
            let q1 = native_to_mat(&spec.pull_back(&out), 3);
            let rel = q0.tr_mul(&q1);
            let angle = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
            assert!((angle - norm(&v) / 2f64.sqrt()).abs() < 1e-8);
        }
    }

    #[test]
    fn sphere_exp_map_second_order_agreement() {
        let spec = ManifoldSpec::new(ManifoldKind::Sphere(2), 6, 1).unwrap();
        let data = sample_manifold(&spec, 10, 2).unwrap();
        let mut rng = substream(3, Domain::Noise, 0);
        let mut ratios = Vec::new();
        for b in data.points.rows() {
            let raw: Vec<f64> = (0..6)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let t = tangent_projection(b, &raw, &spec).unwrap();
            for scale in [0.1, 0.05, 0.025] {
                let v: Vec<f64> = t.iter().map(|x| x * scale / norm(&t)).collect();
                let out = exp_map(b, &v, &spec).unwrap();
                let lin: Vec<f64> = b.iter().zip(&v).map(|(x, y)| x + y).collect();
                let err = norm(&out.iter().zip(&lin).map(|(x, y)| x - y).collect::<Vec<_>>());
                ratios.push(err / (scale * scale));
            }
        }
        // exp(b, v) - (b + v) = -|v|^2 b / 2 + O(|v|^3), so the ratio sits near 1/2.
        for r in ratios {
            assert!((r - 0.5).abs() < 0.01, "ratio {r}");
        }
    }

    #[test]
    fn exp_map_stays_on_sphere_up_to_pi() {
        let spec = ManifoldSpec::new(ManifoldKind::Sphere(3), 7, 2).unwrap();
        let b = sample_manifold(&spec, 1, 1).unwrap().points.row(0).to_vec();
        let mut rng = substream(8, Domain::Noise, 0);
        let raw: Vec<f64> = (0..7)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let t = tangent_projection(&b, &raw, &spec).unwrap();
        for len in [0.5, 1.0, 2.0, PI] {
            let v: Vec<f64> = t.iter().map(|x| x * len / norm(&t)).collect();
            let out = exp_map(&b, &v, &spec).unwrap();
            assert!(distance_to_manifold(&out, &spec).unwrap() < 1e-10);
            let (pb, po) = (spec.pull_back(&b), spec.pull_back(&out));
            let c = dot(&pb, &po);
            let perp: Vec<f64> = po.iter().zip(&pb).map(|(o, x)| o - c * x).collect();
            let geo = norm(&perp).atan2(c);
            assert!((geo - len).abs() < 1e-8);
        }
    }

    #[test]
    fn split_noise_reconstructs_and_is_orthogonal() {
        let spec = ManifoldSpec::new(ManifoldKind::SpecialOrthogonal(4), 50, 1).unwrap();
        let b = sample_manifold(&spec, 1, 1).unwrap().points.row(0).to_vec();
        let dec = split_gaussian_noise(&b, &spec, 17).unwrap();
        let mut rng = substream(17, Domain::Tangent, 0);
        let xi: Vec<f64> = (0..50)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        assert!(max_abs_diff(&dec.reconstruct(), &xi) < 1e-12);
        let ip = dot(&dec.tangent_part, &dec.normal_part).abs();
        assert!(ip <= 1e-10 * norm(&dec.tangent_part) * norm(&dec.normal_part) + 1e-14);
        let again = tangent_projection(&b, &dec.tangent_part, &spec).unwrap();
        assert!(max_abs_diff(&again, &dec.tangent_part) < 1e-12);
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = ManifoldSpec::new(ManifoldKind::SpecialOrthogonal(4), 50, 77).unwrap();
        let s = serde_json::to_string(&spec).unwrap();
        assert!(s.contains("\"D\":50") && s.contains("\"m_or_d\":4"));
        let back: ManifoldSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, spec);
        let bad = r#"{"kind":"circle","m_or_d":2,"D":5,"embed_seed":0}"#;
        assert!(serde_json::from_str::<ManifoldSpec>(bad).is_err());
    }
}

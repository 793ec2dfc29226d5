//! Poincaré disk kernel.
//!
//! Points live in the open unit disk with metric `4/(1-|z|^2)^2`. All
//! routines are generic over [`Real`] so that the gradient engine can push
//! dual numbers through the same code used by the samplers.

use crate::real::Real;

/// Largest Euclidean norm a point may have; constructors project onto it.
pub const MAX_NORM: f64 = 1.0 - 1e-9;

const COINCIDENT_TOL: f64 = 1e-12;
const COLLINEAR_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiskPoint<T = f64> {
    pub x: T,
    pub y: T,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TangentVector<T = f64> {
    pub vx: T,
    pub vy: T,
}

impl<T: Real> DiskPoint<T> {
    /// Builds a point, pulling it radially inside the disk when `|z| > MAX_NORM`.
    pub fn new(x: T, y: T) -> Self {
        let n2 = x * x + y * y;
        if n2.val() > MAX_NORM * MAX_NORM {
            let s = T::cst(MAX_NORM) / n2.sqrt();
            Self { x: x * s, y: y * s }
        } else {
            Self { x, y }
        }
    }

    pub fn origin() -> Self {
        Self { x: T::zero(), y: T::zero() }
    }

    pub fn norm2(&self) -> T {
        self.x * self.x + self.y * self.y
    }

    pub fn norm(&self) -> T {
        self.norm2().sqrt()
    }

    /// Conformal factor `2 / (1 - |z|^2)`.
    pub fn lambda(&self) -> T {
        T::cst(2.0) / (T::one() - self.norm2())
    }

    pub fn neg(&self) -> Self {
        Self { x: -self.x, y: -self.y }
    }

    pub fn values(&self) -> DiskPoint<f64> {
        DiskPoint { x: self.x.val(), y: self.y.val() }
    }
}

impl DiskPoint<f64> {
    /// Re-expresses an `f64` point in another scalar type as a constant.
    pub fn lift<T: Real>(&self) -> DiskPoint<T> {
        DiskPoint { x: T::cst(self.x), y: T::cst(self.y) }
    }
}

impl<T: Real> TangentVector<T> {
    pub fn new(vx: T, vy: T) -> Self {
        Self { vx, vy }
    }

    pub fn zero() -> Self {
        Self { vx: T::zero(), vy: T::zero() }
    }

    pub fn norm(&self) -> T {
        (self.vx * self.vx + self.vy * self.vy).sqrt()
    }

    pub fn scale(&self, s: T) -> Self {
        Self { vx: self.vx * s, vy: self.vy * s }
    }

    pub fn values(&self) -> TangentVector<f64> {
        TangentVector { vx: self.vx.val(), vy: self.vy.val() }
    }
}

/// Hyperbolic distance, `2 asinh(|a-b| / sqrt((1-|a|^2)(1-|b|^2)))`.
///
/// Algebraically equal to the arcosh form but free of the `arcosh(1+eps)`
/// cancellation. Near-coincident points use the first-order metric.
pub fn hyp_distance<T: Real>(a: &DiskPoint<T>, b: &DiskPoint<T>) -> T {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let e2 = dx * dx + dy * dy;
    if e2.val() == 0.0 {
        return T::zero();
    }
    let e = e2.sqrt();
    if e.val() < COINCIDENT_TOL {
        return e * a.lambda();
    }
    let alpha = T::one() - a.norm2();
    let beta = T::one() - b.norm2();
    (e / (alpha * beta).sqrt()).asinh() * 2.0
}

/// Gradient of `hyp_distance(z, c)` with respect to `z`.
pub fn distance_grad<T: Real>(z: &DiskPoint<T>, c: &DiskPoint<T>) -> [T; 2] {
    let dx = z.x - c.x;
    let dy = z.y - c.y;
    let e = (dx * dx + dy * dy).sqrt();
    if e.val() < COINCIDENT_TOL {
        return [T::zero(), T::zero()];
    }
    let alpha = T::one() - z.norm2();
    let beta = T::one() - c.norm2();
    let s = (alpha * beta).sqrt();
    let q = e / s;
    let k = T::cst(2.0) / ((q * q + 1.0).sqrt() * s);
    [k * (dx / e + e * z.x / alpha), k * (dy / e + e * z.y / alpha)]
}

/// Geodesic through two points: a diameter chord or an arc of a circle
/// orthogonal to the unit circle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ArcKind<T = f64> {
    Diameter,
    Circle {
        center: [T; 2],
        radius: T,
        /// Angles of `p` and `q` as seen from the center.
        start_angle: f64,
        end_angle: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeodesicArc<T = f64> {
    pub p: DiskPoint<T>,
    pub q: DiskPoint<T>,
    pub kind: ArcKind<T>,
}

#[derive(Clone, Copy)]
struct Cx<T> {
    re: T,
    im: T,
}

impl<T: Real> Cx<T> {
    fn sub(self, o: Self) -> Self {
        Cx { re: self.re - o.re, im: self.im - o.im }
    }
    fn add(self, o: Self) -> Self {
        Cx { re: self.re + o.re, im: self.im + o.im }
    }
    fn mul(self, o: Self) -> Self {
        Cx { re: self.re * o.re - self.im * o.im, im: self.re * o.im + self.im * o.re }
    }
    fn div(self, o: Self) -> Self {
        let d = o.re * o.re + o.im * o.im;
        Cx {
            re: (self.re * o.re + self.im * o.im) / d,
            im: (self.im * o.re - self.re * o.im) / d,
        }
    }
}

/// Geodesic between `p` and `q`.
///
/// When `p`, `q` and the origin are (numerically) collinear the geodesic is a
/// diameter. Otherwise it is the circle through `p`, `q` and the inversion
/// `p / |p|^2`: the three points are sent to `0, 1, w` and the circumcenter is
/// `(q-p)(w-|w|^2)/(w-conj(w)) + p`.
pub fn geodesic_between<T: Real>(p: &DiskPoint<T>, q: &DiskPoint<T>) -> GeodesicArc<T> {
    let cross = p.x.val() * q.y.val() - p.y.val() * q.x.val();
    let scale = p.norm().val() * q.norm().val();
    if cross.abs() <= COLLINEAR_TOL * scale || scale == 0.0 {
        return GeodesicArc { p: *p, q: *q, kind: ArcKind::Diameter };
    }
    let n2 = p.norm2();
    let z1 = Cx { re: p.x, im: p.y };
    let z2 = Cx { re: q.x, im: q.y };
    let z3 = Cx { re: p.x / n2, im: p.y / n2 };
    let w = z3.sub(z1).div(z2.sub(z1));
    let w_abs2 = w.re * w.re + w.im * w.im;
    let num = Cx { re: w.re - w_abs2, im: w.im };
    let den = Cx { re: T::zero(), im: w.im * 2.0 };
    let c = z2.sub(z1).mul(num.div(den)).add(z1);
    let rx = p.x - c.re;
    let ry = p.y - c.im;
    let radius = (rx * rx + ry * ry).sqrt();
    let (cx, cy) = (c.re.val(), c.im.val());
    GeodesicArc {
        p: *p,
        q: *q,
        kind: ArcKind::Circle {
            center: [c.re, c.im],
            radius,
            start_angle: (p.y.val() - cy).atan2(p.x.val() - cx),
            end_angle: (q.y.val() - cy).atan2(q.x.val() - cx),
        },
    }
}

impl GeodesicArc<f64> {
    /// Point at fraction `t` in `[0, 1]` of the way from `p` to `q` along the
    /// Euclidean rendering of the arc (not constant hyperbolic speed).
    pub fn point_at(&self, t: f64) -> DiskPoint {
        match self.kind {
            ArcKind::Diameter => DiskPoint::new(
                self.p.x + t * (self.q.x - self.p.x),
                self.p.y + t * (self.q.y - self.p.y),
            ),
            ArcKind::Circle { center, radius, start_angle, end_angle } => {
                let mut span = end_angle - start_angle;
                if span > std::f64::consts::PI {
                    span -= 2.0 * std::f64::consts::PI;
                } else if span < -std::f64::consts::PI {
                    span += 2.0 * std::f64::consts::PI;
                }
                let a = start_angle + t * span;
                DiskPoint::new(center[0] + radius * a.cos(), center[1] + radius * a.sin())
            }
        }
    }
}

/// Point of the closed arc nearest the origin.
///
/// Hyperbolic distance from the origin is monotone in Euclidean norm, so this
/// is the foot of the ray from the origin through the circle center when it
/// falls between the endpoints, and the smaller-norm endpoint otherwise.
pub fn closest_point_to_origin<T: Real>(arc: &GeodesicArc<T>) -> DiskPoint<T> {
    let (p, q) = (arc.p, arc.q);
    let nearer = || if p.norm2().val() <= q.norm2().val() { p } else { q };
    match arc.kind {
        ArcKind::Diameter => {
            let (pv, qv) = (p.values(), q.values());
            if pv.x * qv.x + pv.y * qv.y <= 0.0 {
                // Origin lies on the chord.
                DiskPoint::origin()
            } else {
                nearer()
            }
        }
        ArcKind::Circle { center, radius, .. } => {
            let cn = (center[0] * center[0] + center[1] * center[1]).sqrt();
            let s = T::one() - radius / cn;
            let m = DiskPoint { x: center[0] * s, y: center[1] * s };
            let (cx, cy) = (center[0].val(), center[1].val());
            let (mx, my) = (m.x.val() - cx, m.y.val() - cy);
            let side = |z: DiskPoint<T>| mx * (z.y.val() - cy) - my * (z.x.val() - cx);
            if side(p) * side(q) <= 0.0 {
                DiskPoint::new(m.x, m.y)
            } else {
                nearer()
            }
        }
    }
}

/// Möbius addition for curvature -1.
pub fn mobius_add<T: Real>(a: &DiskPoint<T>, b: &DiskPoint<T>) -> DiskPoint<T> {
    let ab = a.x * b.x + a.y * b.y;
    let a2 = a.norm2();
    let b2 = b.norm2();
    let ca = T::one() + ab * 2.0 + b2;
    let cb = T::one() - a2;
    let den = T::one() + ab * 2.0 + a2 * b2;
    DiskPoint::new((ca * a.x + cb * b.x) / den, (ca * a.y + cb * b.y) / den)
}

/// Transports `v` from the origin's tangent plane to `y`'s: `(1 - |y|^2) v`.
pub fn parallel_transport_from_origin<T: Real>(v: &TangentVector<T>, y: &DiskPoint<T>) -> TangentVector<T> {
    v.scale(T::one() - y.norm2())
}

/// `exp_x(v) = x ⊕ tanh((1-|x|^2)|v|) v/|v|`.
pub fn exp_map<T: Real>(x: &DiskPoint<T>, v: &TangentVector<T>) -> DiskPoint<T> {
    let n2 = v.vx * v.vx + v.vy * v.vy;
    if n2.val() == 0.0 {
        return *x;
    }
    let n = n2.sqrt();
    let t = ((T::one() - x.norm2()) * n).tanh() / n;
    mobius_add(x, &DiskPoint::new(v.vx * t, v.vy * t))
}

/// Inverse of [`exp_map`] at an arbitrary base point.
pub fn log_map<T: Real>(x: &DiskPoint<T>, y: &DiskPoint<T>) -> TangentVector<T> {
    if x.values() == y.values() {
        return TangentVector::zero();
    }
    let u = mobius_add(&x.neg(), y);
    let n2 = u.norm2();
    if n2.val() == 0.0 {
        return TangentVector::zero();
    }
    let n = n2.sqrt();
    let s = n.atanh() / n / (T::one() - x.norm2());
    TangentVector::new(u.x * s, u.y * s)
}

/// Circle of hyperbolic radius `radius` about `center`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperbolicCircle {
    pub center: DiskPoint,
    pub radius: f64,
}

/// Euclidean center and radius of a hyperbolic circle.
///
/// Along the ray through the center, the two points at hyperbolic distance
/// `r` solve `(2+uv) t^2 - 4 c t + (2c^2 - uv) = 0` with `u = cosh r - 1`,
/// `v = 1 - c^2`.
pub fn hyperbolic_circle_to_euclidean(c: &DiskPoint, r: f64) -> ([f64; 2], f64) {
    let cn = c.norm();
    let (dx, dy) = if cn > 0.0 { (c.x / cn, c.y / cn) } else { (1.0, 0.0) };
    let u = r.cosh() - 1.0;
    let v = 1.0 - cn * cn;
    let a = 2.0 + u * v;
    let b = -4.0 * cn;
    let cc = 2.0 * cn * cn - u * v;
    let disc = (b * b - 4.0 * a * cc).max(0.0).sqrt();
    let t_lo = (-b - disc) / (2.0 * a);
    let t_hi = (-b + disc) / (2.0 * a);
    let mid = 0.5 * (t_lo + t_hi);
    ([mid * dx, mid * dy], 0.5 * (t_hi - t_lo))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Intersections {
    None,
    Tangent(DiskPoint),
    Two(DiskPoint, DiskPoint),
}

impl Intersections {
    pub fn points(&self) -> Vec<DiskPoint> {
        match *self {
            Intersections::None => vec![],
            Intersections::Tangent(p) => vec![p],
            Intersections::Two(p, q) => vec![p, q],
        }
    }
}

/// Intersections of two hyperbolic circles that lie strictly inside the disk.
pub fn circle_intersections(c1: &HyperbolicCircle, c2: &HyperbolicCircle) -> Intersections {
    let (a, ra) = hyperbolic_circle_to_euclidean(&c1.center, c1.radius);
    let (b, rb) = hyperbolic_circle_to_euclidean(&c2.center, c2.radius);
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let d = (dx * dx + dy * dy).sqrt();
    let tol = 1e-12 * (1.0 + ra + rb);
    if d < tol || d > ra + rb + tol || d < (ra - rb).abs() - tol {
        return Intersections::None;
    }
    let along = (d * d + ra * ra - rb * rb) / (2.0 * d);
    let h2 = ra * ra - along * along;
    let (ux, uy) = (dx / d, dy / d);
    let base = [a[0] + along * ux, a[1] + along * uy];
    let inside = |z: [f64; 2]| z[0] * z[0] + z[1] * z[1] < 1.0;
    if h2 <= tol * tol {
        return if inside(base) {
            Intersections::Tangent(DiskPoint { x: base[0], y: base[1] })
        } else {
            Intersections::None
        };
    }
    let h = h2.sqrt();
    let s1 = [base[0] - h * uy, base[1] + h * ux];
    let s2 = [base[0] + h * uy, base[1] - h * ux];
    match (inside(s1), inside(s2)) {
        (true, true) => Intersections::Two(DiskPoint { x: s1[0], y: s1[1] }, DiskPoint { x: s2[0], y: s2[1] }),
        (true, false) => Intersections::Tangent(DiskPoint { x: s1[0], y: s1[1] }),
        (false, true) => Intersections::Tangent(DiskPoint { x: s2[0], y: s2[1] }),
        (false, false) => Intersections::None,
    }
}

/// Gromov four-point defect maximized over all 4-subsets.
///
/// Returns `None` for fewer than four points.
pub fn delta_hyperbolicity(points: &[DiskPoint]) -> Option<f64> {
    let n = points.len();
    if n < 4 {
        return None;
    }
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = hyp_distance(&points[i], &points[j]);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    let mut delta: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                for l in k + 1..n {
                    let mut s = [
                        d[i * n + j] + d[k * n + l],
                        d[i * n + k] + d[j * n + l],
                        d[i * n + l] + d[j * n + k],
                    ];
                    s.sort_by(|a, b| b.total_cmp(a));
                    delta = delta.max(0.5 * (s[0] - s[1]));
                }
            }
        }
    }
    Some(delta)
}

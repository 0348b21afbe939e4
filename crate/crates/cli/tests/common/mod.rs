//! Shared helpers: running the binary and brute-force metric references that
//! do not use the library's metric code.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3};

pub fn dynba<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_dynba")).args(args).output().expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Value of a `key value...` line.
pub fn field<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')).or((l == key).then_some("")))
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn config_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"))
}

/// Header and rows of a CSV file, split on commas. Fields with quotes are
/// not expected here.
pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>());
    let header = lines.next().unwrap();
    (header, lines.collect())
}

pub fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

/// A pose as a 4x4 homogeneous matrix.
pub type Mat = Matrix4<f64>;

/// Reads `frame tx ty tz qx qy qz qw` lines into matrices.
pub fn parse_tum(text: &str) -> Vec<(u32, Mat)> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let v: Vec<f64> = l.split_whitespace().map(|x| x.parse().unwrap()).collect();
            let q = UnitQuaternion::from_quaternion(Quaternion::new(v[7], v[4], v[5], v[6]));
            let mut m = Mat::identity();
            m.fixed_view_mut::<3, 3>(0, 0).copy_from(q.to_rotation_matrix().matrix());
            m[(0, 3)] = v[1];
            m[(1, 3)] = v[2];
            m[(2, 3)] = v[3];
            (v[0] as u32, m)
        })
        .collect()
}

fn rot(m: &Mat) -> Matrix3<f64> {
    m.fixed_view::<3, 3>(0, 0).into_owned()
}

fn trans(m: &Mat) -> Vector3<f64> {
    Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)])
}

fn inv(m: &Mat) -> Mat {
    let r = rot(m).transpose();
    let t = -(r * trans(m));
    let mut out = Mat::identity();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    out[(0, 3)] = t.x;
    out[(1, 3)] = t.y;
    out[(2, 3)] = t.z;
    out
}

fn rms(xs: &[f64]) -> f64 {
    (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Rotation angle in degrees, from the antisymmetric part and the trace.
fn angle_deg(r: &Matrix3<f64>) -> f64 {
    let s = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm() / 2.0;
    let c = (r.trace() - 1.0) / 2.0;
    s.atan2(c).to_degrees()
}

/// ATE in meters after the least-squares rigid alignment of the estimated
/// positions onto the true ones. Needs non-collinear positions.
pub fn reference_ate(est: &[(u32, Mat)], gt: &[(u32, Mat)]) -> f64 {
    let pairs: Vec<(Vector3<f64>, Vector3<f64>)> = est
        .iter()
        .filter_map(|(k, e)| gt.iter().find(|(j, _)| j == k).map(|(_, g)| (trans(e), trans(g))))
        .collect();
    let n = pairs.len() as f64;
    let ce = pairs.iter().map(|p| p.0).sum::<Vector3<f64>>() / n;
    let cg = pairs.iter().map(|p| p.1).sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (e, g) in &pairs {
        h += (e - ce) * (g - cg).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = (vt.transpose() * u.transpose()).determinant().signum();
    let r = vt.transpose() * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let t = cg - r * ce;
    let errs: Vec<f64> = pairs.iter().map(|(e, g)| (r * e + t - g).norm()).collect();
    rms(&errs)
}

/// RPE as (rotation RMSE in degrees, translation RMSE in meters) over
/// consecutive frame pairs `delta` apart in the list order.
pub fn reference_rpe(est: &[(u32, Mat)], gt: &[(u32, Mat)], delta: usize) -> (f64, f64) {
    let mut rot_err = Vec::new();
    let mut trans_err = Vec::new();
    for k in 0..est.len() - delta {
        let de = inv(&est[k].1) * est[k + delta].1;
        let dg = inv(&gt[k].1) * gt[k + delta].1;
        let e = inv(&dg) * de;
        rot_err.push(angle_deg(&rot(&e)));
        trans_err.push(trans(&e).norm());
    }
    (rms(&rot_err), rms(&trans_err))
}

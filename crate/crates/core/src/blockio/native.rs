//! Lossless line-oriented block format.
//!
//! ```text
//! RPBA1
//! model <tag>
//! shared none | shared <fx> <fy> <skew> <px> <py> <k2> <k4>
//! counts <cameras> <points> <observations>
//! cam <r00 .. r22> <t0 t1 t2> [<f> <k1> <k2>]
//! pt <x> <y> <z> <a|d>
//! obs <camera> <point> <x> <y> <w00> <w01> <w11> <a|w|d>
//! ```

use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use nalgebra::{Matrix2, Matrix3, Rotation3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::model::{Block, Camera, CameraModel, Intrinsics, Observation, ObservationStatus, Point3D, PointStatus, SharedCalibration};

pub const NATIVE_VERSION: &str = "RPBA1";

fn f(out: &mut String, v: f64) {
    let _ = write!(out, " {v:.16e}");
}

pub fn to_native_string(block: &Block) -> Result<String> {
    let model = block.model()?;
    let mut s = String::with_capacity(64 + 120 * block.observations.len());
    s.push_str(NATIVE_VERSION);
    s.push('\n');
    let _ = writeln!(s, "model {}", model.tag());
    match &block.shared_calibration {
        None => s.push_str("shared none\n"),
        Some(cal) => {
            s.push_str("shared");
            for v in cal.to_array() {
                f(&mut s, v);
            }
            s.push('\n');
        }
    }
    let _ = writeln!(s, "counts {} {} {}", block.cameras.len(), block.points.len(), block.observations.len());
    for cam in &block.cameras {
        s.push_str("cam");
        let r = cam.rotation.matrix();
        for i in 0..3 {
            for j in 0..3 {
                f(&mut s, r[(i, j)]);
            }
        }
        for v in cam.translation.iter() {
            f(&mut s, *v);
        }
        if let Intrinsics::FocalRadial { focal, k1, k2 } = cam.intrinsics {
            f(&mut s, focal);
            f(&mut s, k1);
            f(&mut s, k2);
        }
        s.push('\n');
    }
    for p in &block.points {
        s.push_str("pt");
        for v in p.coords.iter() {
            f(&mut s, *v);
        }
        s.push_str(if p.is_active() { " a\n" } else { " d\n" });
    }
    for o in &block.observations {
        let _ = write!(s, "obs {} {}", o.camera, o.point);
        for v in [o.coords.x, o.coords.y, o.weight[(0, 0)], o.weight[(0, 1)], o.weight[(1, 1)]] {
            f(&mut s, v);
        }
        s.push_str(match o.status {
            ObservationStatus::Active => " a\n",
            ObservationStatus::DownWeighted => " w\n",
            ObservationStatus::Deleted => " d\n",
        });
    }
    Ok(s)
}

pub fn write_native(block: &Block, path: impl AsRef<Path>) -> Result<()> {
    super::write_atomic(path.as_ref(), to_native_string(block)?.as_bytes())
}

struct Reader<R> {
    lines: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Reader<R> {
    /// Next record split into fields; `what` names it for error messages.
    fn record(&mut self, what: &str) -> Result<Vec<String>> {
        loop {
            match self.lines.next() {
                Some(Ok(l)) => {
                    self.line += 1;
                    let fields: Vec<String> = l.split_whitespace().map(str::to_owned).collect();
                    if !fields.is_empty() {
                        return Ok(fields);
                    }
                }
                Some(Err(e)) => return Err(Error::parse(self.line + 1, e.to_string())),
                None => return Err(Error::parse(self.line + 1, format!("file ends before {what} record"))),
            }
        }
    }

    fn expect(&mut self, tag: &str, len: std::ops::RangeInclusive<usize>) -> Result<Vec<String>> {
        let r = self.record(tag)?;
        if r[0] != tag || !len.contains(&(r.len() - 1)) {
            return Err(Error::parse(self.line, format!("expected {tag} record, found {:?}", r.join(" "))));
        }
        Ok(r)
    }

    fn num<T: std::str::FromStr>(&self, s: &str) -> Result<T> {
        s.parse().map_err(|_| Error::parse(self.line, format!("invalid number {s:?}")))
    }

    fn nums(&self, fields: &[String]) -> Result<Vec<f64>> {
        fields.iter().map(|s| self.num(s)).collect()
    }
}

pub fn parse_native<R: BufRead>(reader: R) -> Result<Block> {
    let mut rd = Reader {
        lines: reader.lines(),
        line: 0,
    };
    let header = rd.record("header")?;
    if header.len() != 1 || header[0] != NATIVE_VERSION {
        return Err(Error::VersionMismatch {
            found: header.join(" "),
            expected: NATIVE_VERSION,
        });
    }
    let m = rd.expect("model", 1..=1)?;
    let model = CameraModel::from_tag(&m[1]).ok_or_else(|| Error::parse(rd.line, format!("unknown model {:?}", m[1])))?;
    let sh = rd.expect("shared", 1..=7)?;
    let shared_calibration = if sh.len() == 2 && sh[1] == "none" {
        None
    } else if sh.len() == 8 {
        let v = rd.nums(&sh[1..])?;
        Some(SharedCalibration::from_array(v.try_into().expect("seven values")))
    } else {
        return Err(Error::parse(rd.line, "shared record needs 'none' or 7 values"));
    };
    let c = rd.expect("counts", 3..=3)?;
    let (nc, np, no): (usize, usize, usize) = (rd.num(&c[1])?, rd.num(&c[2])?, rd.num(&c[3])?);

    let cam_fields = if model == CameraModel::PerCameraFocalRadial { 15 } else { 12 };
    let mut cameras = Vec::with_capacity(nc);
    for _ in 0..nc {
        let r = rd.expect("cam", cam_fields..=cam_fields)?;
        let v = rd.nums(&r[1..])?;
        let rot = Matrix3::from_row_slice(&v[..9]);
        let intrinsics = match model {
            CameraModel::PoseOnly => Intrinsics::PoseOnly,
            CameraModel::SharedCalibration => Intrinsics::Shared,
            CameraModel::PerCameraFocalRadial => Intrinsics::FocalRadial {
                focal: v[12],
                k1: v[13],
                k2: v[14],
            },
        };
        cameras.push(Camera::new(
            Rotation3::from_matrix_unchecked(rot),
            Vector3::new(v[9], v[10], v[11]),
            intrinsics,
        ));
    }
    let mut points = Vec::with_capacity(np);
    for _ in 0..np {
        let r = rd.expect("pt", 4..=4)?;
        let v = rd.nums(&r[1..4])?;
        let status = match r[4].as_str() {
            "a" => PointStatus::Active,
            "d" => PointStatus::Deleted,
            s => return Err(Error::parse(rd.line, format!("unknown point status {s:?}"))),
        };
        points.push(Point3D {
            coords: Vector3::new(v[0], v[1], v[2]),
            status,
        });
    }
    let mut observations = Vec::with_capacity(no);
    for _ in 0..no {
        let r = rd.expect("obs", 8..=8)?;
        let camera: usize = rd.num(&r[1])?;
        let point: usize = rd.num(&r[2])?;
        let v = rd.nums(&r[3..8])?;
        let status = match r[8].as_str() {
            "a" => ObservationStatus::Active,
            "w" => ObservationStatus::DownWeighted,
            "d" => ObservationStatus::Deleted,
            s => return Err(Error::parse(rd.line, format!("unknown observation status {s:?}"))),
        };
        observations.push(Observation {
            camera,
            point,
            coords: Vector2::new(v[0], v[1]),
            weight: Matrix2::new(v[2], v[3], v[3], v[4]),
            status,
        });
    }
    let block = Block {
        cameras,
        points,
        observations,
        shared_calibration,
    };
    block.validate()?;
    Ok(block)
}

pub fn read_native(path: impl AsRef<Path>) -> Result<Block> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_native(std::io::BufReader::new(file))
}

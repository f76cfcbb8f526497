//! Reader for the "bundle adjustment in the large" text format.
//!
//! ```text
//! <num_cameras> <num_points> <num_observations>
//! <camera_index> <point_index> <x> <y>      (num_observations lines)
//! <9 camera parameters, one per line>      (num_cameras times: axis-angle, t, f, k1, k2)
//! <3 point coordinates, one per line>      (num_points times)
//! ```

use std::io::BufRead;
use std::path::Path;

use nalgebra::{Rotation3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::model::{Block, Camera, Intrinsics, Observation, Point3D};

/// Whitespace-separated token stream that remembers line numbers.
struct Tokens<R> {
    lines: std::io::Lines<R>,
    line: usize,
    pending: std::vec::IntoIter<String>,
}

impl<R: BufRead> Tokens<R> {
    fn new(reader: R) -> Self {
        Tokens {
            lines: reader.lines(),
            line: 0,
            pending: Vec::new().into_iter(),
        }
    }

    fn next_token(&mut self, what: &str) -> Result<String> {
        loop {
            if let Some(t) = self.pending.next() {
                return Ok(t);
            }
            match self.lines.next() {
                Some(Ok(l)) => {
                    self.line += 1;
                    self.pending = l.split_whitespace().map(str::to_owned).collect::<Vec<_>>().into_iter();
                }
                Some(Err(e)) => return Err(Error::parse(self.line + 1, e.to_string())),
                None => return Err(Error::parse(self.line + 1, format!("unexpected end of file, expected {what}"))),
            }
        }
    }

    fn parse<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let t = self.next_token(what)?;
        t.parse()
            .map_err(|_| Error::parse(self.line, format!("invalid {what}: {t:?}")))
    }
}

pub fn parse_bal<R: BufRead>(reader: R) -> Result<Block> {
    let mut tok = Tokens::new(reader);
    let n_cameras: usize = tok.parse("camera count")?;
    let n_points: usize = tok.parse("point count")?;
    let n_obs: usize = tok.parse("observation count")?;

    let mut observations = Vec::with_capacity(n_obs);
    for _ in 0..n_obs {
        let camera: usize = tok.parse("camera index")?;
        let point: usize = tok.parse("point index")?;
        let x: f64 = tok.parse("x")?;
        let y: f64 = tok.parse("y")?;
        if camera >= n_cameras {
            return Err(Error::IndexOutOfRange {
                what: "camera",
                index: camera,
                count: n_cameras,
            });
        }
        if point >= n_points {
            return Err(Error::IndexOutOfRange {
                what: "point",
                index: point,
                count: n_points,
            });
        }
        observations.push(Observation::new(camera, point, Vector2::new(x, y)));
    }

    let mut cameras = Vec::with_capacity(n_cameras);
    for _ in 0..n_cameras {
        let mut p = [0.0; 9];
        for v in &mut p {
            *v = tok.parse("camera parameter")?;
        }
        let rotation = Rotation3::from_scaled_axis(Vector3::new(p[0], p[1], p[2]));
        cameras.push(Camera::new(
            rotation,
            Vector3::new(p[3], p[4], p[5]),
            Intrinsics::FocalRadial {
                focal: p[6],
                k1: p[7],
                k2: p[8],
            },
        ));
    }

    let mut points = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let x: f64 = tok.parse("point coordinate")?;
        let y: f64 = tok.parse("point coordinate")?;
        let z: f64 = tok.parse("point coordinate")?;
        points.push(Point3D::new(Vector3::new(x, y, z)));
    }

    let block = Block {
        cameras,
        points,
        observations,
        shared_calibration: None,
    };
    block.validate()?;
    Ok(block)
}

pub fn read_bal(path: impl AsRef<Path>) -> Result<Block> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_bal(std::io::BufReader::new(file))
}

/// Writes a per-camera focal/radial block back in the same layout.
pub fn write_bal<W: std::io::Write>(block: &Block, mut out: W) -> Result<()> {
    let io = |e| Error::io("<bal>", e);
    let used: Vec<usize> = (0..block.observations.len()).filter(|&k| block.is_used(k)).collect();
    writeln!(out, "{} {} {}", block.cameras.len(), block.points.len(), used.len()).map_err(io)?;
    for &k in &used {
        let o = &block.observations[k];
        writeln!(out, "{} {} {:.16e} {:.16e}", o.camera, o.point, o.coords.x, o.coords.y).map_err(io)?;
    }
    for cam in &block.cameras {
        let Intrinsics::FocalRadial { focal, k1, k2 } = cam.intrinsics else {
            return Err(Error::InvalidBlock("this format stores focal/radial cameras only".into()));
        };
        let w = cam.rotation.scaled_axis();
        for v in [w.x, w.y, w.z, cam.translation.x, cam.translation.y, cam.translation.z, focal, k1, k2] {
            writeln!(out, "{v:.16e}").map_err(io)?;
        }
    }
    for p in &block.points {
        for v in p.coords.iter() {
            writeln!(out, "{v:.16e}").map_err(io)?;
        }
    }
    Ok(())
}

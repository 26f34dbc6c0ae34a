//! File formats: trajectory files (one camera-to-world [R|T] per line,
//! twelve reals, row-major) and correspondence CSVs. Values are written
//! with enough digits that a write/read cycle is bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Correspondence, EgomotionError};
use crate::geometry::{Mat3, NormalizedPoint, Pose, Vec3, ROTATION_TOL};

pub const CORRESPONDENCE_HEADER: &str = "id,x1,y1,x2,y2,depth";

/// Writes camera-to-world poses, one per line as the twelve entries of
/// [R|T] in row-major order.
pub fn write_pose_file(path: &Path, poses: &[Pose]) -> Result<(), EgomotionError> {
    let mut out = BufWriter::new(File::create(path)?);
    for pose in poses {
        let r = pose.rotation();
        let t = pose.translation();
        for row in 0..3 {
            if row > 0 {
                write!(out, " ")?;
            }
            write!(
                out,
                "{:.17e} {:.17e} {:.17e} {:.17e}",
                r[(row, 0)],
                r[(row, 1)],
                r[(row, 2)],
                t[row]
            )?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a trajectory written by [`write_pose_file`] (or any file in that
/// layout). Rotation blocks that drift slightly off the manifold, as
/// happens with low-precision files from other tools, are projected back
/// by polar decomposition; blocks further than 1e-6 from orthonormal are
/// rejected as parse errors.
pub fn read_pose_file(path: &Path) -> Result<Vec<Pose>, EgomotionError> {
    let reader = BufReader::new(File::open(path)?);
    let mut poses = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|e| EgomotionError::Parse {
                    line: lineno,
                    msg: format!("bad number {tok:?}: {e}"),
                })
            })
            .collect::<Result<_, _>>()?;
        if vals.len() != 12 {
            return Err(EgomotionError::Parse {
                line: lineno,
                msg: format!("expected 12 values, found {}", vals.len()),
            });
        }
        let r = Mat3::new(
            vals[0], vals[1], vals[2], vals[4], vals[5], vals[6], vals[8], vals[9], vals[10],
        );
        let t = Vec3::new(vals[3], vals[7], vals[11]);
        let deviation = (r.transpose() * r - Mat3::identity()).norm();
        let rot = if deviation < ROTATION_TOL && r.determinant() > 0.0 {
            r
        } else if deviation < 1e-6 && r.determinant() > 0.0 {
            let svd = r.svd(true, true);
            svd.u.expect("svd requested u") * svd.v_t.expect("svd requested v_t")
        } else {
            return Err(EgomotionError::Parse {
                line: lineno,
                msg: format!("rotation block is off the manifold by {deviation:.3e}"),
            });
        };
        let pose = Pose::new(rot, t).map_err(|e| EgomotionError::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        poses.push(pose);
    }
    Ok(poses)
}

/// Integrates frame-to-frame motions into camera-to-world poses starting
/// from the identity: the k-th output maps camera-k coordinates to the
/// coordinates of the first camera. One longer than the input.
pub fn chain_deltas(deltas: &[Pose]) -> Vec<Pose> {
    let mut out = Vec::with_capacity(deltas.len() + 1);
    out.push(Pose::identity());
    for delta in deltas {
        let next = out.last().expect("seeded with identity").compose(&delta.inverse());
        out.push(next);
    }
    out
}

/// Writes correspondences as CSV with header `id,x1,y1,x2,y2,depth`.
/// The depth field is empty when unknown; weights are working state and
/// are not serialized.
pub fn write_correspondence_csv(
    path: &Path,
    corrs: &[Correspondence],
) -> Result<(), EgomotionError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{CORRESPONDENCE_HEADER}")?;
    for c in corrs {
        write!(
            out,
            "{},{:.17e},{:.17e},{:.17e},{:.17e},",
            c.id, c.x_t.x, c.x_t.y, c.x_next.x, c.x_next.y
        )?;
        if let Some(z) = c.depth_t {
            write!(out, "{z:.17e}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a correspondence CSV written by [`write_correspondence_csv`].
/// All weights come back as 1.0.
pub fn read_correspondence_csv(path: &Path) -> Result<Vec<Correspondence>, EgomotionError> {
    let reader = BufReader::new(File::open(path)?);
    let mut corrs = Vec::new();
    let mut lines = reader.lines().enumerate();
    match lines.next() {
        Some((_, Ok(header))) if header.trim() == CORRESPONDENCE_HEADER => {}
        Some((_, Ok(header))) => {
            return Err(EgomotionError::Parse {
                line: 1,
                msg: format!("expected header {CORRESPONDENCE_HEADER:?}, found {header:?}"),
            })
        }
        Some((_, Err(e))) => return Err(e.into()),
        None => return Ok(corrs),
    }
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(EgomotionError::Parse {
                line: lineno,
                msg: format!("expected 6 fields, found {}", fields.len()),
            });
        }
        let parse_f = |tok: &str| {
            tok.trim().parse::<f64>().map_err(|e| EgomotionError::Parse {
                line: lineno,
                msg: format!("bad number {tok:?}: {e}"),
            })
        };
        let id = fields[0].trim().parse::<u64>().map_err(|e| EgomotionError::Parse {
            line: lineno,
            msg: format!("bad id {:?}: {e}", fields[0]),
        })?;
        let x_t = NormalizedPoint::new(parse_f(fields[1])?, parse_f(fields[2])?);
        let x_next = NormalizedPoint::new(parse_f(fields[3])?, parse_f(fields[4])?);
        let mut corr = Correspondence::new(id, x_t, x_next);
        if !fields[5].trim().is_empty() {
            let depth = parse_f(fields[5])?;
            if depth <= 0.0 {
                return Err(EgomotionError::Parse {
                    line: lineno,
                    msg: format!("depth must be positive, found {depth}"),
                });
            }
            corr = corr.with_depth(depth);
        }
        corrs.push(corr);
    }
    Ok(corrs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::exp_rotation;
    use crate::sim::presets;

    fn sample_poses() -> Vec<Pose> {
        [
            (Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 0.0)),
            (Vec3::new(0.02, -0.013, 0.004), Vec3::new(0.125, -0.75, 2.5)),
            (Vec3::new(-1.3, 0.7, 0.2), Vec3::new(-3.25, 0.5, -1.125)),
            (Vec3::new(0.1, 0.1, 3.0), Vec3::new(1.0 / 3.0, 2.0 / 7.0, -1.0 / 9.0)),
        ]
        .iter()
        .map(|(w, t)| Pose::new(exp_rotation(w), *t).unwrap())
        .collect()
    }

    #[test]
    fn pose_file_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.txt");
        let poses = sample_poses();
        write_pose_file(&path, &poses).unwrap();
        let back = read_pose_file(&path).unwrap();
        assert_eq!(back.len(), poses.len());
        for (a, b) in back.iter().zip(&poses) {
            for i in 0..3 {
                assert_eq!(a.translation()[i].to_bits(), b.translation()[i].to_bits());
                for j in 0..3 {
                    assert_eq!(
                        a.rotation()[(i, j)].to_bits(),
                        b.rotation()[(i, j)].to_bits()
                    );
                }
            }
        }
    }

    #[test]
    fn pose_lines_have_twelve_fields_in_row_major_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.txt");
        let poses = sample_poses();
        write_pose_file(&path, &poses).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let first = text.lines().nth(1).unwrap();
        let vals: Vec<f64> = first.split(' ').map(|t| t.parse().unwrap()).collect();
        assert_eq!(vals.len(), 12);
        let r = poses[1].rotation();
        assert_eq!(vals[0], r[(0, 0)]);
        assert_eq!(vals[1], r[(0, 1)]);
        assert_eq!(vals[3], poses[1].translation().x);
        assert_eq!(vals[4], r[(1, 0)]);
        assert_eq!(vals[11], poses[1].translation().z);
    }

    #[test]
    fn slightly_off_manifold_rotations_are_projected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.txt");
        // Rounded to few digits, as a foreign tool might emit.
        let r = exp_rotation(&Vec3::new(0.3, -0.2, 0.1));
        let mut line = String::new();
        for row in 0..3 {
            for col in 0..3 {
                line.push_str(&format!("{:.8} ", r[(row, col)]));
            }
            let sep = if row < 2 { " " } else { "" };
            line = line.trim_end().to_string();
            line.push_str(&format!(" {:.8}{sep}", 0.5 * row as f64));
        }
        std::fs::write(&path, format!("{line}\n")).unwrap();
        let poses = read_pose_file(&path).unwrap();
        assert_eq!(poses.len(), 1);
        let back = poses[0].rotation();
        assert!((back.transpose() * back - Mat3::identity()).norm() < 1e-12);
        assert!((back - r).norm() < 1e-7);
    }

    #[test]
    fn malformed_pose_lines_report_their_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.txt");
        let good = "1 0 0 0 0 1 0 0 0 0 1 0";
        std::fs::write(&path, format!("{good}\n{good} 7\n")).unwrap();
        match read_pose_file(&path) {
            Err(EgomotionError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        std::fs::write(&path, "1 0 0 0 0 1 0 0 0 0 0.9 0\n").unwrap();
        assert!(matches!(read_pose_file(&path), Err(EgomotionError::Parse { line: 1, .. })));
    }

    #[test]
    fn chained_deltas_invert_frame_to_frame_motion() {
        let deltas: Vec<Pose> = sample_poses().into_iter().skip(1).collect();
        let absolute = chain_deltas(&deltas);
        assert_eq!(absolute.len(), deltas.len() + 1);
        let probe = Vec3::new(0.4, -1.1, 7.0);
        for (k, delta) in deltas.iter().enumerate() {
            // Mapping camera-k+1 coords to world must equal mapping the
            // same physical point from camera-k coords.
            let world_a = absolute[k + 1].transform(&delta.transform(&probe));
            let world_b = absolute[k].transform(&probe);
            assert!((world_a - world_b).norm() < 1e-12);
        }
    }

    #[test]
    fn chained_deltas_recover_a_preset_trajectory() {
        let ps = presets::circular(3, 0.04, 8, 10);
        let deltas: Vec<Pose> =
            (0..ps.trajectory.len() - 1).map(|k| ps.trajectory.delta(k)).collect();
        let absolute = chain_deltas(&deltas);
        for k in 0..ps.trajectory.len() {
            let expect = ps.trajectory.pose(k).inverse();
            let got = &absolute[k];
            assert!((got.rotation() - expect.rotation()).norm() < 1e-12);
            assert!((got.translation() - expect.translation()).norm() < 1e-12);
        }
    }

    #[test]
    fn correspondence_roundtrip_preserves_values_and_resets_weights() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corrs.csv");
        let mut a = Correspondence::new(
            7,
            NormalizedPoint::new(0.123456789012345678, -0.2),
            NormalizedPoint::new(0.13, -0.19),
        )
        .with_depth(12.34567890123456789);
        a.weight = 0.25;
        let b = Correspondence::new(
            8,
            NormalizedPoint::new(-1.0 / 3.0, 1.0 / 7.0),
            NormalizedPoint::new(-0.33, 0.15),
        );
        write_correspondence_csv(&path, &[a.clone(), b.clone()]).unwrap();
        let back = read_correspondence_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].id, 7);
        assert_eq!(back[0].x_t.x.to_bits(), a.x_t.x.to_bits());
        assert_eq!(back[0].x_t.y.to_bits(), a.x_t.y.to_bits());
        assert_eq!(back[0].depth_t.unwrap().to_bits(), a.depth_t.unwrap().to_bits());
        assert_eq!(back[0].weight, 1.0);
        assert_eq!(back[1].depth_t, None);
        assert_eq!(back[1].x_next.y.to_bits(), b.x_next.y.to_bits());
    }

    #[test]
    fn correspondence_csv_rejects_malformed_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corrs.csv");
        std::fs::write(&path, "wrong,header\n").unwrap();
        assert!(matches!(
            read_correspondence_csv(&path),
            Err(EgomotionError::Parse { line: 1, .. })
        ));
        std::fs::write(&path, format!("{CORRESPONDENCE_HEADER}\n1,0.1,0.2,0.3\n")).unwrap();
        assert!(matches!(
            read_correspondence_csv(&path),
            Err(EgomotionError::Parse { line: 2, .. })
        ));
        std::fs::write(&path, format!("{CORRESPONDENCE_HEADER}\n1,0.1,0.2,0.3,0.4,-2.0\n"))
            .unwrap();
        assert!(matches!(
            read_correspondence_csv(&path),
            Err(EgomotionError::Parse { line: 2, .. })
        ));
    }
}

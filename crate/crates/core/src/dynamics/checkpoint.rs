//! Flat little-endian serialization of an architecture and its parameters.
//!
//! Layout: `tag: u32`, `flags: u32` (bit 0 = time dependent), `ndims: u32`,
//! `ndims` dims as `u32`, then every parameter as `f64`.

use std::io::{Read, Write};

use super::{Architecture, DynamicsFunc};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum ArchTag {
    Linear = 0,
    Mlp = 1,
    Planar = 2,
    GatedPlanarSum = 3,
    HamiltonianSplit = 4,
}

impl ArchTag {
    fn from_u32(v: u32) -> Result<Self> {
        Ok(match v {
            0 => ArchTag::Linear,
            1 => ArchTag::Mlp,
            2 => ArchTag::Planar,
            3 => ArchTag::GatedPlanarSum,
            4 => ArchTag::HamiltonianSplit,
            _ => return Err(Error::Format(format!("unknown architecture tag {v}"))),
        })
    }
}

fn header(arch: &Architecture) -> (ArchTag, u32, Vec<usize>) {
    match arch {
        Architecture::Linear { dim } => (ArchTag::Linear, 0, vec![*dim]),
        Architecture::Mlp { dim, hidden, time_dependent } => {
            let mut dims = vec![dim + usize::from(*time_dependent)];
            dims.extend_from_slice(hidden);
            dims.push(*dim);
            (ArchTag::Mlp, u32::from(*time_dependent), dims)
        }
        Architecture::Planar { dim } => (ArchTag::Planar, 0, vec![*dim]),
        Architecture::GatedPlanarSum { dim, units } => (ArchTag::GatedPlanarSum, 1, vec![*dim, *units]),
        Architecture::HamiltonianSplit { dim, hidden } => (ArchTag::HamiltonianSplit, 0, vec![*dim, *hidden]),
    }
}

pub fn write_dynamics<W: Write>(w: &mut W, f: &DynamicsFunc) -> Result<()> {
    let (tag, flags, dims) = header(f.architecture());
    write_u32(w, tag as u32)?;
    write_u32(w, flags)?;
    write_u32(w, dims.len() as u32)?;
    for d in dims {
        write_u32(w, u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?)?;
    }
    write_f64s(w, f.theta())
}

pub fn read_dynamics<R: Read>(r: &mut R) -> Result<DynamicsFunc> {
    let tag = ArchTag::from_u32(read_u32(r)?)?;
    let flags = read_u32(r)?;
    let ndims = read_u32(r)? as usize;
    if ndims == 0 || ndims > 64 {
        return Err(Error::Format(format!("implausible dimension count {ndims}")));
    }
    let dims = (0..ndims).map(|_| read_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let time_dependent = flags & 1 == 1;
    let want = |n: usize| {
        if ndims == n {
            Ok(())
        } else {
            Err(Error::Format(format!("{tag:?} expects {n} dims, found {ndims}")))
        }
    };
    let arch = match tag {
        ArchTag::Linear => {
            want(1)?;
            Architecture::Linear { dim: dims[0] }
        }
        ArchTag::Planar => {
            want(1)?;
            Architecture::Planar { dim: dims[0] }
        }
        ArchTag::GatedPlanarSum => {
            want(2)?;
            Architecture::GatedPlanarSum {
                dim: dims[0],
                units: dims[1],
            }
        }
        ArchTag::HamiltonianSplit => {
            want(2)?;
            Architecture::HamiltonianSplit {
                dim: dims[0],
                hidden: dims[1],
            }
        }
        ArchTag::Mlp => {
            if ndims < 2 {
                return Err(Error::Format("mlp needs at least input and output dims".into()));
            }
            let dim = dims[ndims - 1];
            if dims[0] != dim + usize::from(time_dependent) {
                return Err(Error::Format(format!(
                    "mlp input width {} inconsistent with state dim {dim}",
                    dims[0]
                )));
            }
            Architecture::Mlp {
                dim,
                hidden: dims[1..ndims - 1].to_vec(),
                time_dependent,
            }
        }
    };
    arch.validate().map_err(|e| Error::Format(e.to_string()))?;
    let theta = read_f64s(r, arch.num_params())?;
    DynamicsFunc::new(arch, theta)
}

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut b = [0u8; 8];
    (0..n)
        .map(|_| {
            r.read_exact(&mut b).map_err(truncated)?;
            Ok(f64::from_le_bytes(b))
        })
        .collect()
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("unexpected end of data".into())
    } else {
        Error::Io(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{build_gated_planar, build_hamiltonian, build_mlp_dynamics};
    use crate::rng::RngState;

    #[test]
    fn round_trips_every_architecture() {
        let mut rng = RngState::new(3);
        let fields = vec![
            build_mlp_dynamics(3, &[7, 5], true, &mut rng).unwrap(),
            build_mlp_dynamics(2, &[4], false, &mut rng).unwrap(),
            build_gated_planar(2, 4, &mut rng).unwrap(),
            build_hamiltonian(4, 6, &mut rng).unwrap(),
            DynamicsFunc::planar(&[1.0, 2.0], &[3.0, 4.0], 5.0).unwrap(),
            DynamicsFunc::zeros(Architecture::Linear { dim: 3 }).unwrap(),
        ];
        for f in fields {
            let mut buf = Vec::new();
            write_dynamics(&mut buf, &f).unwrap();
            let back = read_dynamics(&mut buf.as_slice()).unwrap();
            assert_eq!(back, f);
        }
    }

    #[test]
    fn header_is_little_endian() {
        let f = DynamicsFunc::planar(&[1.0], &[2.0], 3.0).unwrap();
        let mut buf = Vec::new();
        write_dynamics(&mut buf, &f).unwrap();
        assert_eq!(&buf[..16], &[2, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(buf.len(), 16 + 3 * 8);
        assert_eq!(&buf[16..24], &1.0f64.to_le_bytes());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(read_dynamics(&mut [9u8, 0, 0, 0].as_slice()), Err(Error::Format(_))));
        let f = DynamicsFunc::planar(&[1.0], &[2.0], 3.0).unwrap();
        let mut buf = Vec::new();
        write_dynamics(&mut buf, &f).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(matches!(read_dynamics(&mut buf.as_slice()), Err(Error::Format(_))));
    }
}

//! Binary state container.
//!
//! Layout (all little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "HFBSTATE"
//! 8       4     format version (u32, currently 1)
//! 12      8     box_length (f64)
//! 20      4     points_per_dim (u32)
//! 24      8     mass (f64)
//! 32      4     spin (u32)
//! 36      8     coupling (f64)
//! 44      8     matrix dimension M = q·N³ (u64)
//! 52      16·M² γ row-major, (re, im) f64 pairs
//! ...     16·M² α row-major, (re, im) f64 pairs
//! ```

use crate::error::Error;
use crate::lattice::{Lattice, LatticeConfig};
use crate::linalg::{C64, CMat};
use crate::state::QuasiFreeState;
use crate::Result;
use std::io::{Read, Write};
use std::sync::Arc;

pub const MAGIC: &[u8; 8] = b"HFBSTATE";
pub const VERSION: u32 = 1;

pub fn write_state<W: Write>(state: &QuasiFreeState, mut w: W) -> Result<()> {
    let cfg = state.lattice.config;
    let m = state.dim();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&cfg.box_length.to_le_bytes())?;
    w.write_all(&(cfg.points_per_dim as u32).to_le_bytes())?;
    w.write_all(&cfg.mass.to_le_bytes())?;
    w.write_all(&(cfg.spin as u32).to_le_bytes())?;
    w.write_all(&cfg.coupling.to_le_bytes())?;
    w.write_all(&(m as u64).to_le_bytes())?;
    let mut write_mat = |mat: &CMat| -> Result<()> {
        for i in 0..m {
            for j in 0..m {
                let v = mat[(i, j)];
                w.write_all(&v.re.to_le_bytes())?;
                w.write_all(&v.im.to_le_bytes())?;
            }
        }
        Ok(())
    };
    write_mat(&state.gamma)?;
    write_mat(&state.alpha)?;
    Ok(())
}

pub fn read_state<R: Read>(mut r: R) -> Result<QuasiFreeState> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Container(format!(
            "bad magic {:?}; not an HFBSTATE container",
            magic
        )));
    }
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    let mut f64buf = [0u8; 8];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::Container(format!(
            "unsupported container version {version}"
        )));
    }
    r.read_exact(&mut f64buf)?;
    let box_length = f64::from_le_bytes(f64buf);
    r.read_exact(&mut u32buf)?;
    let points_per_dim = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut f64buf)?;
    let mass = f64::from_le_bytes(f64buf);
    r.read_exact(&mut u32buf)?;
    let spin = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut f64buf)?;
    let coupling = f64::from_le_bytes(f64buf);
    r.read_exact(&mut u64buf)?;
    let m = u64::from_le_bytes(u64buf) as usize;
    let cfg = LatticeConfig {
        box_length,
        points_per_dim,
        mass,
        spin,
        coupling,
    };
    let lattice = Arc::new(Lattice::build(cfg)?);
    if lattice.dim != m {
        return Err(Error::Container(format!(
            "dimension mismatch: header M = {m}, lattice q·N³ = {}",
            lattice.dim
        )));
    }
    let read_mat = |r: &mut R| -> Result<CMat> {
        let mut mat = CMat::zeros(m, m);
        let mut buf = vec![0u8; 16 * m];
        for i in 0..m {
            r.read_exact(&mut buf)?;
            for j in 0..m {
                let re = f64::from_le_bytes(buf[16 * j..16 * j + 8].try_into().unwrap());
                let im = f64::from_le_bytes(buf[16 * j + 8..16 * j + 16].try_into().unwrap());
                mat[(i, j)] = C64::new(re, im);
            }
        }
        Ok(mat)
    };
    let gamma = read_mat(&mut r)?;
    let alpha = read_mat(&mut r)?;
    QuasiFreeState::new(lattice, gamma, alpha)
}

pub fn save_state(state: &QuasiFreeState, path: &std::path::Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_state(state, std::io::BufWriter::new(f))
}

pub fn load_state(path: &std::path::Path) -> Result<QuasiFreeState> {
    let f = std::fs::File::open(path)?;
    read_state(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_preserves_bits() {
        let lattice = Arc::new(
            Lattice::build(LatticeConfig {
                box_length: 9.0,
                points_per_dim: 2,
                mass: 1.0,
                spin: 2,
                coupling: 2.0,
            })
            .unwrap(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let st = crate::state::random_admissible(lattice, &mut rng, 3.0, 0.5, false);
        let mut buf = Vec::new();
        write_state(&st, &mut buf).unwrap();
        let st2 = read_state(buf.as_slice()).unwrap();
        assert_eq!(st.dim(), st2.dim());
        for i in 0..st.dim() {
            for j in 0..st.dim() {
                assert_eq!(st.gamma[(i, j)].re.to_bits(), st2.gamma[(i, j)].re.to_bits());
                assert_eq!(st.gamma[(i, j)].im.to_bits(), st2.gamma[(i, j)].im.to_bits());
                assert_eq!(st.alpha[(i, j)].re.to_bits(), st2.alpha[(i, j)].re.to_bits());
                assert_eq!(st.alpha[(i, j)].im.to_bits(), st2.alpha[(i, j)].im.to_bits());
            }
        }
    }

    #[test]
    fn rejects_corrupt_header() {
        let bad = b"NOTSTATE________________";
        assert!(read_state(bad.as_slice()).is_err());
    }
}

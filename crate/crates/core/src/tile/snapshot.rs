//! Binary tile snapshots.
//!
//! Layout: the 8-byte magic `XBARTILE`, a little-endian `u32` version, a
//! `u32` header length, a JSON [`TileConfig`] header, then `rows·cols`
//! little-endian `f64` values for each of: device weights, reference
//! weights, `Δw₀⁺`, `Δw₀⁻`, `w_max`, `w_min`. Arrays are row-major.

use std::io::{self, Read, Write};

use thiserror::Error;

use super::{CrossbarTile, TileConfig, TileError};
use crate::device::SoftBoundParams;

const MAGIC: &[u8; 8] = b"XBARTILE";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("not a tile snapshot (bad magic)")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    Version(u32),
    #[error("snapshot header: {0}")]
    Header(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Tile(#[from] TileError),
}

pub fn write_snapshot<W: Write>(tile: &CrossbarTile, mut out: W) -> Result<(), SnapshotError> {
    let header = serde_json::to_vec(&tile.cfg)?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(&header)?;
    let mut put = |vals: &mut dyn Iterator<Item = f64>| -> io::Result<()> {
        for v in vals {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    };
    put(&mut tile.device.iter().copied())?;
    put(&mut tile.reference.iter().copied())?;
    put(&mut tile.params.iter().map(|p| p.dw0_plus))?;
    put(&mut tile.params.iter().map(|p| p.dw0_minus))?;
    put(&mut tile.params.iter().map(|p| p.w_max))?;
    put(&mut tile.params.iter().map(|p| p.w_min))?;
    out.flush()?;
    Ok(())
}

pub fn read_snapshot<R: Read>(mut input: R) -> Result<CrossbarTile, SnapshotError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(SnapshotError::Version(version));
    }
    let len = read_u32(&mut input)? as usize;
    let mut header = vec![0u8; len];
    input.read_exact(&mut header)?;
    let cfg: TileConfig = serde_json::from_slice(&header)?;
    let (dac, adc) = cfg.analog.validate()?;
    let n = cfg.rows.checked_mul(cfg.cols).ok_or_else(|| {
        TileError::InvalidConfig(format!("{}x{} overflows", cfg.rows, cfg.cols))
    })?;
    let mut arrays = Vec::with_capacity(6);
    for _ in 0..6 {
        let mut buf = vec![0u8; n * 8];
        input.read_exact(&mut buf)?;
        let vals: Vec<f64> = buf
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        arrays.push(vals);
    }
    let params = (0..n)
        .map(|k| SoftBoundParams {
            dw0_plus: arrays[2][k],
            dw0_minus: arrays[3][k],
            w_max: arrays[4][k],
            w_min: arrays[5][k],
        })
        .collect();
    let reference = std::mem::take(&mut arrays[1]);
    let device = std::mem::take(&mut arrays[0]);
    Ok(CrossbarTile::from_parts(cfg, dac, adc, params, device, reference))
}

fn read_u32<R: Read>(input: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{DeviceKind, DeviceVariation, Direction};
    use crate::rng::stream_rng;
    use crate::tile::{AnalogConfig, InitSpec, PulseUpdateConfig};

    #[test]
    fn round_trip_is_exact() {
        let cfg = TileConfig {
            rows: 7,
            cols: 5,
            nominal: SoftBoundParams::new(0.01, 0.012, 1.0, -0.8).unwrap(),
            kind: DeviceKind::SoftBound,
            variation: DeviceVariation::default(),
            analog: AnalogConfig::default(),
            pulse: PulseUpdateConfig::default(),
            init: InitSpec::Uniform(0.3),
            seed: 99,
        };
        let mut t = CrossbarTile::new(cfg).unwrap();
        let mut rng = stream_rng(1, 2);
        for _ in 0..13 {
            t.pulse_all(Direction::Down, &mut rng);
        }
        t.copy_to_reference();
        t.pulse_all(Direction::Up, &mut rng);
        let mut buf = Vec::new();
        write_snapshot(&t, &mut buf).unwrap();
        let back = read_snapshot(&buf[..]).unwrap();
        assert_eq!(back.config(), t.config());
        assert_eq!(back.device_weights(), t.device_weights());
        assert_eq!(back.reference_weights(), t.reference_weights());
        assert_eq!(back.params(), t.params());
        assert_eq!(back.read_weights(), t.read_weights());
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(read_snapshot(&b"NOTATILE\x01\0\0\0"[..]), Err(SnapshotError::BadMagic)));
        let mut buf = MAGIC.to_vec();
        buf.extend_from_slice(&7u32.to_le_bytes());
        assert!(matches!(read_snapshot(&buf[..]), Err(SnapshotError::Version(7))));
    }
}

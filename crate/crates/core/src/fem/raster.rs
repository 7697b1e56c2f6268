//! Plain-text velocity raster: a regular grid of wave-speed samples looked
//! up by nearest cell, the format heterogeneous velocity models ship in.
//!
//! ```text
//! nx ny x0 y0 dx dy
//! v(0,0) v(1,0) ... v(nx-1,0)
//! v(0,1) ...                    (row-major, y outer; free whitespace)
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::fem::problem::WaveSpeed;

#[derive(Debug, Clone)]
pub struct VelocityRaster {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
    values: Vec<f64>,
}

impl VelocityRaster {
    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut toks = text.split_whitespace();
        let mut next_f64 = |what: &str| -> Result<f64> {
            toks.next()
                .ok_or_else(|| Error::invalid(format!("raster: missing {what}")))?
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("raster: bad {what}")))
        };
        let nx = next_f64("nx")? as usize;
        let ny = next_f64("ny")? as usize;
        let x0 = next_f64("x0")?;
        let y0 = next_f64("y0")?;
        let dx = next_f64("dx")?;
        let dy = next_f64("dy")?;
        if nx == 0 || ny == 0 || !(dx > 0.0) || !(dy > 0.0) {
            return Err(Error::invalid("raster: bad grid dimensions"));
        }
        let mut values = Vec::with_capacity(nx * ny);
        for i in 0..nx * ny {
            values.push(next_f64(&format!("value {i}"))?);
        }
        if values.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("raster: wave speeds must be positive"));
        }
        Ok(VelocityRaster {
            nx,
            ny,
            x0,
            y0,
            dx,
            dy,
            values,
        })
    }

    /// Nearest-cell lookup, clamped to the grid.
    pub fn sample(&self, p: [f64; 2]) -> f64 {
        let ix = (((p[0] - self.x0) / self.dx).floor() as isize)
            .clamp(0, self.nx as isize - 1) as usize;
        let iy = (((p[1] - self.y0) / self.dy).floor() as isize)
            .clamp(0, self.ny as isize - 1) as usize;
        self.values[iy * self.nx + ix]
    }

    pub fn into_wave_speed(self) -> WaveSpeed {
        WaveSpeed::Function(Box::new(move |p| self.sample(p)))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

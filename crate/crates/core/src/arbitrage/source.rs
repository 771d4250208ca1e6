use crate::error::Result;
use crate::interp::Pchip;
use crate::surfaces::VolSurface;

/// Anything that can quote an implied vol at arbitrary `(maturity, delta)`.
pub trait SurfaceSource {
    fn maturity_range(&self) -> (f64, f64);
    fn delta_range(&self) -> (f64, f64);
    /// Vols at `(maturity, delta)` pairs, in order.
    fn vols_at(&self, coords: &[(f64, f64)]) -> Result<Vec<f64>>;
}

/// Grid surfaces are read off-grid by monotone cubic interpolation in delta and
/// linear interpolation of total variance in maturity (flat vol beyond the ends).
impl SurfaceSource for VolSurface {
    fn maturity_range(&self) -> (f64, f64) {
        let m = self.grid().maturities();
        (m[0], m[m.len() - 1])
    }

    fn delta_range(&self) -> (f64, f64) {
        let d = self.grid().deltas();
        (d[0], d[d.len() - 1])
    }

    fn vols_at(&self, coords: &[(f64, f64)]) -> Result<Vec<f64>> {
        let grid = self.grid();
        let ts = grid.maturities();
        let deltas = grid.deltas().to_vec();
        let smiles = (0..ts.len())
            .map(|i| {
                let row = (0..deltas.len()).map(|j| self.vol(i, j)).collect();
                Pchip::new(deltas.clone(), row)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(coords
            .iter()
            .map(|&(t, d)| {
                let k = ts.partition_point(|&m| m <= t);
                if k == 0 {
                    smiles[0].eval(d)
                } else if k >= ts.len() {
                    smiles[ts.len() - 1].eval(d)
                } else {
                    let (ta, tb) = (ts[k - 1], ts[k]);
                    let (sa, sb) = (smiles[k - 1].eval(d), smiles[k].eval(d));
                    let u = (t - ta) / (tb - ta);
                    let w = (1.0 - u) * ta * sa * sa + u * tb * sb * sb;
                    (w / t).sqrt()
                }
            })
            .collect())
    }
}

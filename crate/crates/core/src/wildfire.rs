//! Stochastic cellular-automaton wildfire on a rectangular fuel raster.
//!
//! Each cell carries an ignition flag, a fuel stock, and a burn rate. Fire
//! spreads on the Moore (8-cell) neighborhood: a quiescent burnable cell
//! ignites with probability `1 - Π (1 - p_o)` over its currently ignited
//! neighbors, where `p_o` is the kernel probability for the offset pointing
//! at that neighbor. Updates are synchronous — every new flag is sampled
//! from the previous step's grid — and an ignited cell consumes fuel at its
//! burn rate until the stock hits zero, at which point it is extinguished
//! and permanently burned out.
//!
//! The grid owns a counter-based RNG so trajectories are a pure function of
//! `(initial grid, kernel, seed)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::Scalar;

/// Fixed Moore-neighborhood offsets in row-major scan order, as `(dx, dy)`.
pub const MOORE_OFFSETS: [(i32, i32); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Errors reported by grid operations.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FireError {
    #[error("cell ({x}, {y}) outside {width}x{height} grid")]
    OutOfRange { x: usize, y: usize, width: usize, height: usize },
}

/// Per-cell fire state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FireCell<F> {
    /// Currently burning.
    pub ignited: bool,
    /// Remaining fuel stock, in fuel units (one unit burns per step at rate 1).
    pub fuel: F,
    /// Fuel units consumed per step while ignited.
    pub burn_rate: F,
    /// False once the cell has burned out; burned cells never reignite.
    pub burnable: bool,
}

/// Spread kernel: per-offset ignition probabilities over [`MOORE_OFFSETS`].
///
/// `probabilities[i]` is the chance, per step, that fire jumps from the
/// neighbor at `MOORE_OFFSETS[i]` (relative to the target cell) into the
/// target cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SpreadKernel<F> {
    pub offsets: Vec<(i32, i32)>,
    pub probabilities: Vec<F>,
}

impl<F: Scalar> SpreadKernel<F> {
    /// Direction-independent kernel with a single spread probability.
    pub fn uniform(p_spread: F) -> Self {
        Self {
            offsets: MOORE_OFFSETS.to_vec(),
            probabilities: vec![p_spread.max(F::zero()).min(F::one()); 8],
        }
    }

    /// Kernel with per-direction multipliers (e.g. wind bias). Entries are
    /// ordered like [`MOORE_OFFSETS`]; products are clamped into [0, 1].
    pub fn with_wind(p_spread: F, multipliers: [F; 8]) -> Self {
        Self {
            offsets: MOORE_OFFSETS.to_vec(),
            probabilities: multipliers
                .iter()
                .map(|m| (p_spread * *m).max(F::zero()).min(F::one()))
                .collect(),
        }
    }
}

/// Where an episode's fire starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FireSource {
    /// Deterministic origin cell.
    Fixed { x: usize, y: usize },
    /// Uniformly random origin inside a centered `width x height` box
    /// (clamped to the grid), sampled from the grid's RNG.
    RandomBox { width: usize, height: usize },
}

/// Rectangular fire raster with deterministic random state.
#[derive(Debug, Clone)]
pub struct FireGrid<F> {
    width: usize,
    height: usize,
    cells: Vec<FireCell<F>>,
    step_index: u64,
    rng: ChaCha8Rng,
    /// Loose bounding box around every cell that has ever ignited
    /// (`min_x, min_y, max_x, max_y`); `None` while the grid is quiet.
    active_box: Option<(usize, usize, usize, usize)>,
}

impl<F: Scalar> FireGrid<F> {
    /// Builds a quiescent grid. Fuel stocks are drawn per cell (row-major)
    /// as uniform random integers in `fuel_range` (inclusive); every cell
    /// starts unignited and burnable with the given burn rate.
    pub fn new(width: usize, height: usize, fuel_range: (u32, u32), burn_rate: F, seed: u64) -> Self {
        assert!(width > 0 && height > 0, "grid dimensions must be positive");
        let (lo, hi) = fuel_range;
        assert!(lo <= hi, "fuel range must be ordered");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = (0..width * height)
            .map(|_| FireCell {
                ignited: false,
                fuel: F::from_u32(rng.random_range(lo..=hi)).unwrap(),
                burn_rate,
                burnable: true,
            })
            .collect();
        Self { width, height, cells, step_index: 0, rng, active_box: None }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Fine steps taken since construction.
    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    #[inline]
    fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    fn in_range(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height
    }

    pub fn cell(&self, x: usize, y: usize) -> Result<&FireCell<F>, FireError> {
        if !self.in_range(x, y) {
            return Err(FireError::OutOfRange { x, y, width: self.width, height: self.height });
        }
        Ok(&self.cells[self.index(x, y)])
    }

    pub fn cell_mut(&mut self, x: usize, y: usize) -> Result<&mut FireCell<F>, FireError> {
        if !self.in_range(x, y) {
            return Err(FireError::OutOfRange { x, y, width: self.width, height: self.height });
        }
        let idx = self.index(x, y);
        Ok(&mut self.cells[idx])
    }

    pub fn cells(&self) -> &[FireCell<F>] {
        &self.cells
    }

    pub fn ignited_count(&self) -> usize {
        self.cells.iter().filter(|c| c.ignited).count()
    }

    /// True if the cell is currently ignited or has burned out; used by the
    /// asset encroachment check, which must not reset once fire has passed.
    #[inline]
    pub fn touched_by_fire(&self, x: usize, y: usize) -> bool {
        let c = &self.cells[self.index(x, y)];
        c.ignited || !c.burnable
    }

    fn note_ignition(&mut self, x: usize, y: usize) {
        self.active_box = Some(match self.active_box {
            None => (x, y, x, y),
            Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
        });
    }

    /// Scan region for the next update: the active box expanded by one cell,
    /// clamped to the grid.
    fn scan_box(&self) -> Option<(usize, usize, usize, usize)> {
        self.active_box.map(|(x0, y0, x1, y1)| {
            (x0.saturating_sub(1), y0.saturating_sub(1), (x1 + 1).min(self.width - 1), (y1 + 1).min(self.height - 1))
        })
    }

    /// Ignites the episode's origin cell. A fixed origin outside the grid is
    /// an error; an origin without usable fuel is a no-op (nothing to burn).
    pub fn ignite_source(&mut self, source: FireSource) -> Result<(), FireError> {
        let (x, y) = match source {
            FireSource::Fixed { x, y } => {
                if !self.in_range(x, y) {
                    return Err(FireError::OutOfRange { x, y, width: self.width, height: self.height });
                }
                (x, y)
            }
            FireSource::RandomBox { width, height } => {
                let bw = width.min(self.width).max(1);
                let bh = height.min(self.height).max(1);
                let x0 = (self.width - bw) / 2;
                let y0 = (self.height - bh) / 2;
                let x = x0 + self.rng.random_range(0..bw);
                let y = y0 + self.rng.random_range(0..bh);
                (x, y)
            }
        };
        let idx = self.index(x, y);
        let cell = &mut self.cells[idx];
        if cell.burnable && cell.fuel > F::zero() {
            cell.ignited = true;
            self.note_ignition(x, y);
        }
        Ok(())
    }

    /// Probability that cell `(x, y)` is ignited after the next step, given
    /// the current grid: 1 for an already burning cell, 0 for a burned-out
    /// or fuel-less cell, else the complement of no neighbor spreading in.
    pub fn ignition_probability(&self, kernel: &SpreadKernel<F>, x: usize, y: usize) -> Result<F, FireError> {
        let cell = self.cell(x, y)?;
        if cell.ignited {
            return Ok(F::one());
        }
        if !cell.burnable || cell.fuel <= F::zero() {
            return Ok(F::zero());
        }
        let mut survive = F::one();
        for (i, &(dx, dy)) in kernel.offsets.iter().enumerate() {
            let nx = x as i64 + dx as i64;
            let ny = y as i64 + dy as i64;
            if nx < 0 || ny < 0 || nx >= self.width as i64 || ny >= self.height as i64 {
                continue;
            }
            if self.cells[self.index(nx as usize, ny as usize)].ignited {
                survive *= F::one() - kernel.probabilities[i];
            }
        }
        Ok(F::one() - survive)
    }

    /// Burns one step of fuel on an ignited cell, extinguishing it and
    /// marking it burned out when the stock reaches zero.
    pub fn step_fuel(cell: &mut FireCell<F>) {
        if !cell.ignited || cell.fuel <= F::zero() {
            return;
        }
        cell.fuel = (cell.fuel - cell.burn_rate).max(F::zero());
        if cell.fuel <= F::zero() {
            cell.ignited = false;
            cell.burnable = false;
        }
    }

    /// Advances the fire by one fine step: samples fresh ignition flags for
    /// the whole grid from the previous state (synchronous update), then
    /// applies the fuel update to every burning cell.
    ///
    /// RNG draws are consumed in row-major order, and only for cells whose
    /// ignition is genuinely uncertain (probability strictly inside (0, 1));
    /// certain outcomes are applied without consuming randomness, so the
    /// stream depends only on the trajectory itself.
    pub fn step_fire(&mut self, kernel: &SpreadKernel<F>) {
        if let Some((x0, y0, x1, y1)) = self.scan_box() {
            let mut new_ignitions: Vec<usize> = Vec::new();
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let cell = &self.cells[self.index(x, y)];
                    if cell.ignited || !cell.burnable || cell.fuel <= F::zero() {
                        continue;
                    }
                    let p = self
                        .ignition_probability(kernel, x, y)
                        .expect("scan box stays inside the grid");
                    let ignites = if p <= F::zero() {
                        false
                    } else if p >= F::one() {
                        true
                    } else {
                        F::lit(self.rng.random::<f64>()) < p
                    };
                    if ignites {
                        new_ignitions.push(self.index(x, y));
                    }
                }
            }
            for idx in new_ignitions {
                self.cells[idx].ignited = true;
                let (x, y) = (idx % self.width, idx / self.width);
                self.note_ignition(x, y);
            }
            // Fuel pass over the (possibly grown) active region.
            if let Some((bx0, by0, bx1, by1)) = self.active_box {
                for y in by0..=by1 {
                    for x in bx0..=bx1 {
                        let idx = self.index(x, y);
                        Self::step_fuel(&mut self.cells[idx]);
                    }
                }
            }
        }
        self.step_index += 1;
    }

    /// Runs `substeps` fine steps (the fire advances several times per
    /// operator decision interval).
    pub fn advance_coarse(&mut self, kernel: &SpreadKernel<F>, substeps: u32) {
        assert!(substeps >= 1, "coarse advance needs at least one substep");
        for _ in 0..substeps {
            self.step_fire(kernel);
        }
    }

    /// ASCII rendering of ignition state: `#` burning, `.` quiet, `x` burned
    /// out. Row per line, origin top-left.
    pub fn render_ascii(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let c = &self.cells[self.index(x, y)];
                out.push(if c.ignited {
                    '#'
                } else if !c.burnable {
                    'x'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type Grid = FireGrid<f64>;

    fn quiet_grid(n: usize) -> Grid {
        FireGrid::new(n, n, (12, 12), 1.0, 7)
    }

    #[test]
    fn step_fuel_burns_one_unit() {
        let mut cell = FireCell { ignited: true, fuel: 12.0, burn_rate: 1.0, burnable: true };
        Grid::step_fuel(&mut cell);
        assert_eq!(cell.fuel, 11.0);
        assert!(cell.ignited && cell.burnable);
    }

    #[test]
    fn step_fuel_leaves_quiet_cell_alone() {
        let mut cell = FireCell { ignited: false, fuel: 5.0, burn_rate: 1.0, burnable: true };
        Grid::step_fuel(&mut cell);
        assert_eq!(cell.fuel, 5.0);
    }

    #[test]
    fn step_fuel_clamps_and_burns_out() {
        let mut cell = FireCell { ignited: true, fuel: 1.0, burn_rate: 2.0, burnable: true };
        Grid::step_fuel(&mut cell);
        assert_eq!(cell.fuel, 0.0);
        assert!(!cell.ignited, "exhausted cell must extinguish");
        assert!(!cell.burnable, "exhausted cell must be burned out");
    }

    #[test]
    fn probability_is_zero_without_burning_neighbors() {
        let grid = quiet_grid(5);
        let kernel = SpreadKernel::uniform(0.35);
        assert_eq!(grid.ignition_probability(&kernel, 2, 2).unwrap(), 0.0);
    }

    #[test]
    fn probability_is_one_on_burning_cell() {
        let mut grid = quiet_grid(5);
        grid.ignite_source(FireSource::Fixed { x: 2, y: 2 }).unwrap();
        let kernel = SpreadKernel::uniform(0.35);
        assert_eq!(grid.ignition_probability(&kernel, 2, 2).unwrap(), 1.0);
    }

    #[test]
    fn probability_composes_over_two_neighbors() {
        let mut grid = quiet_grid(5);
        grid.ignite_source(FireSource::Fixed { x: 1, y: 2 }).unwrap();
        grid.ignite_source(FireSource::Fixed { x: 3, y: 2 }).unwrap();
        let kernel = SpreadKernel::uniform(0.35);
        let p = grid.ignition_probability(&kernel, 2, 2).unwrap();
        assert!((p - (1.0 - 0.65 * 0.65)).abs() < 1e-12, "got {p}");
    }

    #[test]
    fn probability_out_of_range_is_an_error() {
        let grid = quiet_grid(5);
        let kernel = SpreadKernel::uniform(0.35);
        assert!(grid.ignition_probability(&kernel, 5, 0).is_err());
    }

    #[test]
    fn probability_zero_on_burned_out_cell() {
        let mut grid = quiet_grid(3);
        {
            let cell = grid.cell_mut(1, 1).unwrap();
            cell.burnable = false;
            cell.fuel = 0.0;
        }
        grid.ignite_source(FireSource::Fixed { x: 0, y: 1 }).unwrap();
        let kernel = SpreadKernel::uniform(0.9);
        assert_eq!(grid.ignition_probability(&kernel, 1, 1).unwrap(), 0.0);
    }

    #[test]
    fn quiet_grid_stays_quiet() {
        let mut grid = quiet_grid(6);
        let kernel = SpreadKernel::uniform(0.35);
        let before = grid.cells().to_vec();
        grid.advance_coarse(&kernel, 6);
        assert_eq!(grid.cells(), &before[..]);
        assert_eq!(grid.step_index(), 6);
    }

    #[test]
    fn certain_kernel_fills_moore_neighborhood() {
        let mut grid = quiet_grid(5);
        grid.ignite_source(FireSource::Fixed { x: 2, y: 2 }).unwrap();
        let kernel = SpreadKernel::uniform(1.0);
        grid.step_fire(&kernel);
        for y in 0..5 {
            for x in 0..5 {
                let expect = (x as i64 - 2).abs().max((y as i64 - 2).abs()) <= 1;
                assert_eq!(grid.cell(x, y).unwrap().ignited, expect, "cell ({x},{y})");
            }
        }
    }

    /// Independent single-cell trace: an isolated burning cell with fuel `h`
    /// and burn rate 1 stays ignited for exactly `h` steps, then burns out.
    #[test]
    fn isolated_cell_burns_for_fuel_steps() {
        let mut grid = quiet_grid(3);
        grid.ignite_source(FireSource::Fixed { x: 1, y: 1 }).unwrap();
        let kernel = SpreadKernel::uniform(0.0);
        let mut expected_fuel = 12.0;
        for step in 0..12 {
            assert!(grid.cell(1, 1).unwrap().ignited, "still burning at step {step}");
            grid.step_fire(&kernel);
            expected_fuel -= 1.0;
            assert_eq!(grid.cell(1, 1).unwrap().fuel, expected_fuel);
        }
        let cell = grid.cell(1, 1).unwrap();
        assert!(!cell.ignited && !cell.burnable && cell.fuel == 0.0);
    }

    #[test]
    fn trajectories_are_deterministic_in_the_seed() {
        let kernel = SpreadKernel::uniform(0.35);
        let mut a = FireGrid::<f64>::new(20, 20, (6, 18), 1.0, 99);
        let mut b = FireGrid::<f64>::new(20, 20, (6, 18), 1.0, 99);
        a.ignite_source(FireSource::Fixed { x: 10, y: 10 }).unwrap();
        b.ignite_source(FireSource::Fixed { x: 10, y: 10 }).unwrap();
        for _ in 0..30 {
            a.step_fire(&kernel);
            b.step_fire(&kernel);
        }
        assert_eq!(a.cells(), b.cells());
    }

    #[test]
    fn random_source_lands_in_centered_box() {
        for seed in 0..50 {
            let mut grid = FireGrid::<f64>::new(35, 35, (5, 9), 1.0, seed);
            grid.ignite_source(FireSource::RandomBox { width: 25, height: 25 }).unwrap();
            let mut origin = None;
            for y in 0..35 {
                for x in 0..35 {
                    if grid.cell(x, y).unwrap().ignited {
                        origin = Some((x, y));
                    }
                }
            }
            let (x, y) = origin.expect("source ignited");
            assert!((5..30).contains(&x) && (5..30).contains(&y), "({x},{y}) outside box");
        }
    }

    #[test]
    fn fixed_source_out_of_grid_errors() {
        let mut grid = quiet_grid(4);
        assert!(grid.ignite_source(FireSource::Fixed { x: 4, y: 0 }).is_err());
    }

    #[test]
    fn burned_out_cell_never_reignites() {
        let mut grid = quiet_grid(3);
        {
            let cell = grid.cell_mut(1, 1).unwrap();
            cell.ignited = true;
            cell.fuel = 1.0;
        }
        grid.note_ignition(1, 1);
        let kernel = SpreadKernel::uniform(1.0);
        grid.step_fire(&kernel); // center burns out, ring ignites
        assert!(!grid.cell(1, 1).unwrap().burnable);
        for _ in 0..5 {
            grid.step_fire(&kernel);
            assert!(!grid.cell(1, 1).unwrap().ignited, "burned-out cell reignited");
        }
    }

    #[test]
    fn total_fuel_never_increases() {
        let kernel = SpreadKernel::uniform(0.6);
        let mut grid = FireGrid::<f64>::new(15, 15, (3, 9), 1.0, 3);
        grid.ignite_source(FireSource::Fixed { x: 7, y: 7 }).unwrap();
        let mut last: f64 = grid.cells().iter().map(|c| c.fuel).sum();
        for _ in 0..40 {
            grid.step_fire(&kernel);
            let total: f64 = grid.cells().iter().map(|c| c.fuel).sum();
            assert!(total <= last + 1e-12);
            last = total;
        }
    }

    #[test]
    fn probability_monotone_in_ignited_neighbors() {
        let kernel = SpreadKernel::uniform(0.35);
        let mut grid = quiet_grid(5);
        let mut previous = 0.0;
        for (i, &(dx, dy)) in MOORE_OFFSETS.iter().enumerate() {
            let x = (2 + dx) as usize;
            let y = (2 + dy) as usize;
            grid.cell_mut(x, y).unwrap().ignited = true;
            let p = grid.ignition_probability(&kernel, 2, 2).unwrap();
            assert!(p >= previous, "offset {i}: p dropped from {previous} to {p}");
            previous = p;
        }
    }

    #[test]
    fn ascii_dump_shows_fire_and_burnout() {
        let mut grid = quiet_grid(3);
        grid.ignite_source(FireSource::Fixed { x: 0, y: 0 }).unwrap();
        grid.cell_mut(2, 2).unwrap().burnable = false;
        let art = grid.render_ascii();
        assert_eq!(art, "#..\n...\n..x\n");
    }
}

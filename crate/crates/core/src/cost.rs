//! Analytic crossbar cost model: maps every layer onto NVM crossbar tiles and
//! reports energy, latency, area, and per-layer utilization.
//!
//! A layer's weight matrix occupies `rows_needed = K^2 * C_in` word lines and
//! `cols_needed = C_out * cells_per_weight` bit lines, split into a grid of
//! `R x R` tiles. Tiles along a column band operate in parallel; row bands
//! serialize input reuse, so latency grows with `tiles_rows` only. Weight
//! encoding, input bit-serial streaming, and ADC sharing are collapsed into
//! the unit cost constants.

use crate::scalar::Scalar;
use crate::space::{Backbone, HardwarePick, Rollout};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Per-operation cost constants. The defaults are order-of-magnitude
/// placeholders and intentionally config-overridable; nothing downstream
/// depends on their exact values, only on orderings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitCosts<F> {
    /// pJ per cell read in one array activation.
    pub read_energy_per_cell: F,
    /// pJ per ADC conversion.
    pub adc_energy_per_conversion: F,
    /// ns per array operation.
    pub cycle_time: F,
    /// um^2 per NVM cell.
    pub cell_area: F,
    /// um^2 per column ADC (amortized per array row of ADCs).
    pub adc_area: F,
}

impl<F: Scalar> Default for UnitCosts<F> {
    fn default() -> Self {
        UnitCosts {
            read_energy_per_cell: F::from_f64(0.1),
            adc_energy_per_conversion: F::from_f64(2.0),
            cycle_time: F::from_f64(100.0),
            cell_area: F::from_f64(0.05),
            adc_area: F::from_f64(1500.0),
        }
    }
}

/// Total bits per weight before splitting across cells.
pub const DEFAULT_WEIGHT_BITS: u32 = 8;

/// One concrete hardware instance to cost a network against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardwareConfig<F> {
    /// Crossbar rows = cols.
    pub crossbar_size: usize,
    pub adc_resolution: u32,
    /// Bits per NVM cell.
    pub device_precision: u32,
    /// Bits per weight in total; a weight spans
    /// `ceil(weight_bits / device_precision)` cells.
    pub weight_bits: u32,
    pub unit_costs: UnitCosts<F>,
    /// um^2; reports with area above it are invalid.
    pub area_budget: F,
}

impl<F: Scalar> HardwareConfig<F> {
    pub fn new(pick: HardwarePick, weight_bits: u32, unit_costs: UnitCosts<F>, area_budget: F) -> Self {
        HardwareConfig {
            crossbar_size: pick.crossbar_size,
            adc_resolution: pick.adc_resolution,
            device_precision: pick.device_precision,
            weight_bits,
            unit_costs,
            area_budget,
        }
    }

    pub fn cells_per_weight(&self) -> usize {
        (self.weight_bits.div_ceil(self.device_precision)).max(1) as usize
    }
}

/// Shape of one layer as seen by the mapper. Fully connected layers are
/// 1x1-kernel convolutions over a single spatial position with `in_channels`
/// equal to the flattened feature size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Output spatial size; the layer computes `out_height * out_width`
    /// activations (one array pass each per row band).
    pub out_height: usize,
    pub out_width: usize,
}

impl LayerShape {
    pub fn conv(kernel: usize, in_channels: usize, out_channels: usize, out_h: usize, out_w: usize) -> Self {
        LayerShape {
            kernel,
            in_channels,
            out_channels,
            out_height: out_h,
            out_width: out_w,
        }
    }

    pub fn fully_connected(in_features: usize, out_features: usize) -> Self {
        LayerShape {
            kernel: 1,
            in_channels: in_features,
            out_channels: out_features,
            out_height: 1,
            out_width: 1,
        }
    }

    pub fn activations(&self) -> usize {
        self.out_height * self.out_width
    }
}

/// How one layer lands on the tile grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerMapping<F> {
    pub rows_needed: usize,
    pub cols_needed: usize,
    pub tiles_rows: usize,
    pub tiles_cols: usize,
    /// Fraction of allocated cells holding weights, in (0, 1].
    pub utilization: F,
    pub activations: usize,
}

/// Cost totals for a network on one hardware instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport<F> {
    /// pJ for one inference.
    pub energy: F,
    /// ns for one inference.
    pub latency: F,
    /// um^2 of crossbar macro area.
    pub area: F,
    pub per_layer: Vec<LayerMapping<F>>,
    /// `area <= area_budget` (boundary inclusive).
    pub valid: bool,
}

impl<F: Scalar> CostReport<F> {
    pub fn empty(valid: bool) -> Self {
        CostReport {
            energy: F::zero(),
            latency: F::zero(),
            area: F::zero(),
            per_layer: Vec::new(),
            valid,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("layer {layer} has an empty mapping (rows {rows}, cols {cols})")]
    EmptyLayer { layer: usize, rows: usize, cols: usize },
    #[error("rollout has {got} layers, backbone expects {expected}")]
    LayerCountMismatch { expected: usize, got: usize },
    #[error("pooling collapses the spatial size to zero at layer {layer}")]
    SpatialCollapse { layer: usize },
}

/// Maps one layer onto the tile grid.
pub fn map_layer<F: Scalar>(
    shape: &LayerShape,
    hw: &HardwareConfig<F>,
) -> Result<LayerMapping<F>, CostError> {
    let rows_needed = shape.kernel * shape.kernel * shape.in_channels;
    let cols_needed = shape.out_channels * hw.cells_per_weight();
    if rows_needed == 0 || cols_needed == 0 {
        return Err(CostError::EmptyLayer {
            layer: 0,
            rows: rows_needed,
            cols: cols_needed,
        });
    }
    let r = hw.crossbar_size;
    let tiles_rows = rows_needed.div_ceil(r);
    let tiles_cols = cols_needed.div_ceil(r);
    let used = F::from_usize(rows_needed) * F::from_usize(cols_needed);
    let allocated = F::from_usize(tiles_rows) * F::from_usize(tiles_cols) * F::from_usize(r * r);
    Ok(LayerMapping {
        rows_needed,
        cols_needed,
        tiles_rows,
        tiles_cols,
        utilization: used / allocated,
        activations: shape.activations(),
    })
}

/// Costs a whole network. Totals are sums of per-layer terms:
///
/// * energy = activations * tiles_rows * tiles_cols *
///   (R * read_energy + active_cols_per_tile * adc_energy)
/// * latency = activations * tiles_rows * cycle_time
/// * area = tiles * (R^2 * cell_area + R * adc_area)
pub fn cost<F: Scalar>(
    network: &[LayerShape],
    hw: &HardwareConfig<F>,
) -> Result<CostReport<F>, CostError> {
    let r = hw.crossbar_size;
    let rf = F::from_usize(r);
    let u = &hw.unit_costs;
    let mut energy = F::zero();
    let mut latency = F::zero();
    let mut area = F::zero();
    let mut per_layer = Vec::with_capacity(network.len());
    for (i, shape) in network.iter().enumerate() {
        let m = map_layer(shape, hw).map_err(|e| match e {
            CostError::EmptyLayer { rows, cols, .. } => CostError::EmptyLayer { layer: i, rows, cols },
            other => other,
        })?;
        let acts = F::from_usize(m.activations);
        let tiles = F::from_usize(m.tiles_rows * m.tiles_cols);
        let active_cols_per_tile = F::from_usize(m.cols_needed) / F::from_usize(m.tiles_cols);
        energy += acts
            * tiles
            * (rf * u.read_energy_per_cell + active_cols_per_tile * u.adc_energy_per_conversion);
        latency += acts * F::from_usize(m.tiles_rows) * u.cycle_time;
        area += tiles * (rf * rf * u.cell_area + rf * u.adc_area);
        per_layer.push(m);
    }
    let valid = area <= hw.area_budget;
    Ok(CostReport {
        energy,
        latency,
        area,
        per_layer,
        valid,
    })
}

/// Area check on its own: true iff `area <= area_budget`.
pub fn check_validity<F: Scalar>(report: &CostReport<F>, hw: &HardwareConfig<F>) -> bool {
    report.area <= hw.area_budget
}

/// Derives the mapper-facing layer shapes for a rollout on a backbone:
/// stride-1 same-padding convolutions, optional 2x2 max pooling, then the
/// fully connected stack (`num_fc_layers - 1` hidden layers of
/// `fc_hidden_size`, one output layer of `num_classes`).
pub fn network_shapes(rollout: &Rollout, backbone: &Backbone) -> Result<Vec<LayerShape>, CostError> {
    if rollout.layers.len() != backbone.num_conv_layers {
        return Err(CostError::LayerCountMismatch {
            expected: backbone.num_conv_layers,
            got: rollout.layers.len(),
        });
    }
    let (mut h, mut w, mut c) = backbone.input_shape;
    let mut shapes = Vec::with_capacity(backbone.num_conv_layers + backbone.num_fc_layers);
    for (i, pick) in rollout.layers.iter().enumerate() {
        if h == 0 || w == 0 {
            return Err(CostError::SpatialCollapse { layer: i });
        }
        shapes.push(LayerShape::conv(pick.kernel, c, pick.channels, h, w));
        c = pick.channels;
        if backbone.pool_after.contains(&i) {
            h /= 2;
            w /= 2;
            if h == 0 || w == 0 {
                return Err(CostError::SpatialCollapse { layer: i });
            }
        }
    }
    let mut in_features = h * w * c;
    for _ in 0..backbone.num_fc_layers.saturating_sub(1) {
        shapes.push(LayerShape::fully_connected(in_features, backbone.fc_hidden_size));
        in_features = backbone.fc_hidden_size;
    }
    shapes.push(LayerShape::fully_connected(in_features, backbone.num_classes));
    Ok(shapes)
}

/// Costs a rollout end to end: derive shapes, then run the mapper.
pub fn cost_rollout<F: Scalar>(
    rollout: &Rollout,
    backbone: &Backbone,
    weight_bits: u32,
    unit_costs: UnitCosts<F>,
    area_budget: F,
) -> Result<CostReport<F>, CostError> {
    let hw = HardwareConfig::new(rollout.hardware, weight_bits, unit_costs, area_budget);
    let shapes = network_shapes(rollout, backbone)?;
    cost(&shapes, &hw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{default_space, example_rollout};
    use approx::assert_relative_eq;

    fn unit_hw(r: usize) -> HardwareConfig<f64> {
        HardwareConfig {
            crossbar_size: r,
            adc_resolution: 6,
            device_precision: 8,
            weight_bits: 8,
            unit_costs: UnitCosts {
                read_energy_per_cell: 1.0,
                adc_energy_per_conversion: 1.0,
                cycle_time: 1.0,
                cell_area: 1.0,
                adc_area: 1.0,
            },
            area_budget: 1e12,
        }
    }

    #[test]
    fn map_layer_spec_case_128() {
        // R=128, K=3, C_in=16, C_out=32, 1 cell/weight.
        let m = map_layer(&LayerShape::conv(3, 16, 32, 8, 8), &unit_hw(128)).unwrap();
        assert_eq!(m.rows_needed, 144);
        assert_eq!(m.cols_needed, 32);
        assert_eq!(m.tiles_rows, 2);
        assert_eq!(m.tiles_cols, 1);
        assert_relative_eq!(m.utilization, 144.0 * 32.0 / (2.0 * 128.0 * 128.0));
        assert_relative_eq!(m.utilization, 0.140625);
    }

    #[test]
    fn exact_fit_has_utilization_one() {
        let m = map_layer(&LayerShape::conv(1, 128, 128, 1, 1), &unit_hw(128)).unwrap();
        assert_eq!((m.tiles_rows, m.tiles_cols), (1, 1));
        assert_eq!(m.utilization, 1.0);
    }

    #[test]
    fn row_band_counts_match_hand_arithmetic() {
        let m5 = map_layer(&LayerShape::conv(5, 32, 64, 1, 1), &unit_hw(128)).unwrap();
        assert_eq!(m5.rows_needed, 800);
        assert_eq!(m5.tiles_rows, 7);
        let m3 = map_layer(&LayerShape::conv(3, 32, 64, 1, 1), &unit_hw(128)).unwrap();
        assert_eq!(m3.rows_needed, 288);
        assert_eq!(m3.tiles_rows, 3);
    }

    #[test]
    fn empty_network_costs_zero_and_is_valid() {
        let report = cost::<f64>(&[], &unit_hw(128)).unwrap();
        assert_eq!(report.energy, 0.0);
        assert_eq!(report.latency, 0.0);
        assert_eq!(report.area, 0.0);
        assert!(report.valid);
    }

    #[test]
    fn single_exact_fit_layer_with_unit_costs() {
        // 1x1 exact fit, one activation: energy = R*1 + R*1, latency = cycle,
        // area = R^2 + R.
        let hw = unit_hw(128);
        let report = cost(&[LayerShape::conv(1, 128, 128, 1, 1)], &hw).unwrap();
        assert_relative_eq!(report.energy, 128.0 + 128.0);
        assert_relative_eq!(report.latency, 1.0);
        assert_relative_eq!(report.area, 128.0 * 128.0 + 128.0);
    }

    #[test]
    fn zero_sized_layer_is_an_error() {
        let err = map_layer(&LayerShape::conv(1, 0, 8, 1, 1), &unit_hw(64)).unwrap_err();
        assert!(matches!(err, CostError::EmptyLayer { .. }));
    }

    #[test]
    fn boundary_area_is_valid_epsilon_above_is_not() {
        let mut hw = unit_hw(128);
        let shapes = [LayerShape::conv(1, 128, 128, 1, 1)];
        let area = cost(&shapes, &hw).unwrap().area;
        hw.area_budget = area;
        assert!(cost(&shapes, &hw).unwrap().valid);
        hw.area_budget = area * (1.0 - 1e-12);
        assert!(!cost(&shapes, &hw).unwrap().valid);
    }

    #[test]
    fn kernel_5_needs_strictly_more_rows_than_kernel_3_everywhere() {
        // Default backbone at the example rollout vs the same with kernel 5:
        // rows_needed strictly higher per conv layer.
        let space = default_space(1e12);
        let hw = unit_hw(128);
        let base = network_shapes(&example_rollout(), &space.backbone).unwrap();
        let mut wide = example_rollout();
        for p in &mut wide.layers {
            p.kernel = 5;
        }
        let widened = network_shapes(&wide, &space.backbone).unwrap();
        for (a, b) in base.iter().zip(&widened).take(6) {
            let ma = map_layer(a, &hw).unwrap();
            let mb = map_layer(b, &hw).unwrap();
            // Independent recomputation of K^2 * C_in.
            assert_eq!(ma.rows_needed, 3 * 3 * a.in_channels);
            assert_eq!(mb.rows_needed, 5 * 5 * a.in_channels);
            assert!(mb.rows_needed > ma.rows_needed);
        }
    }

    #[test]
    fn additivity_of_totals_over_concatenation() {
        let hw = unit_hw(64);
        let a = vec![
            LayerShape::conv(3, 3, 16, 8, 8),
            LayerShape::conv(5, 16, 32, 8, 8),
        ];
        let b = vec![
            LayerShape::fully_connected(512, 64),
            LayerShape::fully_connected(64, 10),
        ];
        let ab: Vec<_> = a.iter().chain(&b).copied().collect();
        let ra = cost(&a, &hw).unwrap();
        let rb = cost(&b, &hw).unwrap();
        let rab = cost(&ab, &hw).unwrap();
        assert_relative_eq!(rab.energy, ra.energy + rb.energy, max_relative = 1e-12);
        assert_relative_eq!(rab.latency, ra.latency + rb.latency, max_relative = 1e-12);
        assert_relative_eq!(rab.area, ra.area + rb.area, max_relative = 1e-12);
    }

    #[test]
    fn monotone_in_kernel_and_out_channels() {
        let hw = unit_hw(128);
        let base = LayerShape::conv(3, 16, 32, 8, 8);
        let report = cost(&[base], &hw).unwrap();
        for (k, c_out) in [(5, 32), (3, 64), (7, 128)] {
            let bigger = LayerShape::conv(k, 16, c_out, 8, 8);
            let rb = cost(&[bigger], &hw).unwrap();
            let ma = &report.per_layer[0];
            let mb = &rb.per_layer[0];
            assert!(mb.rows_needed * mb.cols_needed >= ma.rows_needed * ma.cols_needed);
            assert!(rb.energy >= report.energy);
            assert!(rb.area >= report.area);
        }
    }

    #[test]
    fn shape_chain_matches_hand_trace() {
        let space = default_space(1e12);
        let shapes = network_shapes(&example_rollout(), &space.backbone).unwrap();
        assert_eq!(shapes.len(), 8);
        // Conv outputs stay at the incoming spatial size (same padding).
        assert_eq!((shapes[0].out_height, shapes[0].out_width), (32, 32));
        assert_eq!((shapes[2].out_height, shapes[2].out_width), (16, 16));
        assert_eq!((shapes[4].out_height, shapes[4].out_width), (8, 8));
        // Flatten at 4x4x128 -> 2048 -> 1024 -> 10.
        assert_eq!(shapes[6].in_channels, 2048);
        assert_eq!(shapes[6].out_channels, 1024);
        assert_eq!(shapes[7].in_channels, 1024);
        assert_eq!(shapes[7].out_channels, 10);
        assert_eq!(shapes[7].activations(), 1);
    }

    #[test]
    fn cells_per_weight_rounds_up() {
        let mut hw = unit_hw(64);
        hw.device_precision = 3;
        hw.weight_bits = 8;
        assert_eq!(hw.cells_per_weight(), 3);
        hw.device_precision = 8;
        assert_eq!(hw.cells_per_weight(), 1);
        hw.device_precision = 1;
        assert_eq!(hw.cells_per_weight(), 8);
    }
}

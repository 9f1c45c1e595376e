//! Vehicle drop and mobility on a wrap-around Manhattan grid.
//!
//! The area holds `grid_columns` north-south roads and `grid_rows` east-west
//! roads, each centred in its column/row of blocks. Every road carries
//! `lanes_per_direction` lanes per direction with right-hand traffic. The
//! base station sits at the centre of the area.

use std::io::Write;

use rand::Rng;

use crate::env::SimConfig;
use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Turn probabilities at an intersection: straight, left, right.
pub const TURN_PROBABILITIES: [f64; 3] = [0.5, 0.25, 0.25];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vehicle {
    pub position: Point,
    /// Axis-aligned unit vector.
    pub heading: Point,
    pub speed: f64,
}

/// Either endpoint of a radio link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Node {
    Vehicle(usize),
    BaseStation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Grid {
    width: f64,
    height: f64,
    columns: usize,
    rows: usize,
}

impl Grid {
    fn from_config(cfg: &SimConfig) -> Self {
        Self {
            width: cfg.area_width_m,
            height: cfg.area_height_m,
            columns: cfg.grid_columns,
            rows: cfg.grid_rows,
        }
    }

    /// x coordinates of the north-south road centrelines.
    fn vertical_roads(&self) -> impl Iterator<Item = f64> + '_ {
        let block = self.width / self.columns as f64;
        (0..self.columns).map(move |j| (j as f64 + 0.5) * block)
    }

    /// y coordinates of the east-west road centrelines.
    fn horizontal_roads(&self) -> impl Iterator<Item = f64> + '_ {
        let block = self.height / self.rows as f64;
        (0..self.rows).map(move |i| (i as f64 + 0.5) * block)
    }

    fn extent(&self, axis: usize) -> f64 {
        if axis == 0 {
            self.width
        } else {
            self.height
        }
    }

    /// Centrelines of the roads a vehicle travelling along `axis` crosses.
    fn crossings(&self, axis: usize) -> Vec<f64> {
        if axis == 0 {
            self.vertical_roads().collect()
        } else {
            self.horizontal_roads().collect()
        }
    }

    fn nearest_centerline(&self, axis: usize, coord: f64) -> f64 {
        // Lanes of a road moving along `axis` sit at a fixed perpendicular
        // coordinate, offset from one of the perpendicular-axis centrelines.
        let perp = 1 - axis;
        let lines = self.crossings(perp);
        let extent = self.extent(perp);
        let mut best = lines[0];
        let mut best_d = f64::INFINITY;
        for c in lines {
            let d = wrapped_gap(coord, c, extent);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        best
    }
}

fn wrapped_gap(a: f64, b: f64, extent: f64) -> f64 {
    let d = (a - b).rem_euclid(extent);
    d.min(extent - d)
}

fn heading_axis(h: Point) -> usize {
    if h[0] != 0.0 {
        0
    } else {
        1
    }
}

/// Unit vector pointing to the driver's right.
fn right_of(h: Point) -> Point {
    [h[1], -h[0]]
}

fn left_of(h: Point) -> Point {
    [-h[1], h[0]]
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologyState {
    pub vehicles: Vec<Vehicle>,
    pub bs_position: Point,
    pub v2i_vehicles: Vec<usize>,
    /// `(transmitter, receiver)` vehicle indices.
    pub v2v_pairs: Vec<(usize, usize)>,
    grid: Grid,
}

impl TopologyState {
    /// Drops vehicles uniformly on the lane centrelines and forms the links.
    ///
    /// Vehicle `m` hosts V2I link `m` and vehicle `k` transmits V2V link `k`;
    /// each V2V receiver is the transmitter's nearest other vehicle.
    pub fn drop_vehicles<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let grid = Grid::from_config(cfg);
        let lane_offsets: Vec<f64> = (0..cfg.lanes_per_direction)
            .map(|l| (l as f64 + 0.5) * cfg.lane_width_m)
            .collect();

        // (centreline, heading, length); length weights the lane choice.
        let mut lanes = Vec::new();
        for x in grid.vertical_roads() {
            for h in [[0.0, 1.0], [0.0, -1.0]] {
                for &o in &lane_offsets {
                    let r = right_of(h);
                    lanes.push(([x + o * r[0], 0.0], h, grid.height));
                }
            }
        }
        for y in grid.horizontal_roads() {
            for h in [[1.0, 0.0], [-1.0, 0.0]] {
                for &o in &lane_offsets {
                    let r = right_of(h);
                    lanes.push(([0.0, y + o * r[1]], h, grid.width));
                }
            }
        }
        let total: f64 = lanes.iter().map(|l| l.2).sum();

        let vehicles = (0..cfg.vehicle_count())
            .map(|_| {
                let mut pick = rng.random::<f64>() * total;
                let mut chosen = lanes[lanes.len() - 1];
                for lane in &lanes {
                    if pick < lane.2 {
                        chosen = *lane;
                        break;
                    }
                    pick -= lane.2;
                }
                let (base, heading, length) = chosen;
                let along = rng.random::<f64>() * length;
                let axis = heading_axis(heading);
                let mut position = base;
                position[axis] = along;
                Vehicle {
                    position,
                    heading,
                    speed: cfg.speed_mps,
                }
            })
            .collect::<Vec<_>>();

        let mut topo = Self {
            vehicles,
            bs_position: [grid.width / 2.0, grid.height / 2.0],
            v2i_vehicles: (0..cfg.m_links).collect(),
            v2v_pairs: Vec::with_capacity(cfg.k_links),
            grid,
        };
        topo.v2v_pairs = (0..cfg.k_links)
            .map(|tx| (tx, topo.nearest_neighbor(tx)))
            .collect();
        Ok(topo)
    }

    /// Nearest other vehicle; ties go to the lowest index.
    pub fn nearest_neighbor(&self, vehicle: usize) -> usize {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for j in 0..self.vehicles.len() {
            if j == vehicle {
                continue;
            }
            let d = self.pair_distance(Node::Vehicle(vehicle), Node::Vehicle(j));
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        best
    }

    pub fn position(&self, node: Node) -> Point {
        match node {
            Node::Vehicle(i) => self.vehicles[i].position,
            Node::BaseStation => self.bs_position,
        }
    }

    /// Horizontal Euclidean distance in metres.
    pub fn pair_distance(&self, a: Node, b: Node) -> f64 {
        let p = self.position(a);
        let q = self.position(b);
        (p[0] - q[0]).hypot(p[1] - q[1])
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= 0.0 && p[0] < self.grid.width && p[1] >= 0.0 && p[1] < self.grid.height
    }

    /// Advances every vehicle by `speed * dt`, turning at intersections and
    /// wrapping at the area boundary. Link pairings are kept.
    pub fn update_positions<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::usage(format!(
                "time step must be positive, got {dt}"
            )));
        }
        let mut next = self.clone();
        for v in &mut next.vehicles {
            advance(&self.grid, v, v.speed * dt, rng);
        }
        Ok(next)
    }

    /// Distance each vehicle moved between `self` and `later`, accounting for wrap.
    pub fn displacements(&self, later: &TopologyState) -> Vec<f64> {
        self.vehicles
            .iter()
            .zip(&later.vehicles)
            .map(|(a, b)| {
                let dx = wrapped_gap(a.position[0], b.position[0], self.grid.width);
                let dy = wrapped_gap(a.position[1], b.position[1], self.grid.height);
                dx.hypot(dy)
            })
            .collect()
    }

    /// Writes `vehicle,x,y,heading_deg` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "vehicle,x,y,heading_deg")?;
        for (i, v) in self.vehicles.iter().enumerate() {
            let deg = v.heading[1].atan2(v.heading[0]).to_degrees();
            writeln!(out, "{i},{},{},{deg}", v.position[0], v.position[1])?;
        }
        Ok(())
    }
}

fn advance<R: Rng + ?Sized>(grid: &Grid, v: &mut Vehicle, distance: f64, rng: &mut R) {
    let mut remaining = distance;
    while remaining > 0.0 {
        let axis = heading_axis(v.heading);
        let sign = v.heading[axis];
        let extent = grid.extent(axis);
        let p = v.position[axis];
        // Distance to the next crossing centreline strictly ahead.
        let mut gap = f64::INFINITY;
        for c in grid.crossings(axis) {
            let mut d = ((c - p) * sign).rem_euclid(extent);
            if d <= 0.0 {
                d = extent;
            }
            gap = gap.min(d);
        }
        if gap > remaining {
            v.position[axis] = (p + sign * remaining).rem_euclid(extent);
            break;
        }
        remaining -= gap;
        let crossing = (p + sign * gap).rem_euclid(extent);
        v.position[axis] = crossing;

        let u = rng.random::<f64>();
        let new_heading = if u < TURN_PROBABILITIES[0] {
            continue;
        } else if u < TURN_PROBABILITIES[0] + TURN_PROBABILITIES[1] {
            left_of(v.heading)
        } else {
            right_of(v.heading)
        };

        // Keep the lane slot: lateral offset magnitude from the old road.
        let perp = 1 - axis;
        let old_center = grid.nearest_centerline(axis, v.position[perp]);
        let offset = wrapped_gap(v.position[perp], old_center, grid.extent(perp));
        let new_axis = perp;
        let r = right_of(new_heading);
        // Lateral coordinate of the new lane on the crossing road.
        v.position[axis] = (crossing + offset * r[axis]).rem_euclid(extent);
        // Place the vehicle just past the old road's centreline.
        v.position[new_axis] =
            (old_center + offset * new_heading[new_axis]).rem_euclid(grid.extent(new_axis));
        v.heading = new_heading;
    }
}

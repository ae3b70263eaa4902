//! Dataset recording and replay: a generated run (world, trajectory,
//! inertial stream, per-frame association labels) written as plain csv plus
//! a key-value meta file, reloading bit for bit.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use nalgebra::{Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Frame, PinholeIntrinsics, Quaternion};
use crate::motion::ImuSample;
use crate::sim::imu::{synth_imu, ImuSpec};
use crate::sim::render::{project_labels, PointLabel};
use crate::sim::trajectory::{
    generate_trajectory, DynamicsClass, GroundTruth, GtSample, TrajectoryError, TrajectorySpec,
};
use crate::sim::world::{World, WorldPoint};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("meta file: {0}")]
    Meta(String),
    #[error("{file}: {detail}")]
    Inconsistent { file: &'static str, detail: String },
}

/// Everything needed to regenerate or interpret a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub seed: u64,
    pub trajectory: TrajectorySpec,
    pub imu: ImuSpec,
    pub n_points: usize,
    pub half_extent: Vector3<f64>,
    /// Camera mount in the robot frame.
    pub sensor_in_robot: Frame,
    pub intrinsics: PinholeIntrinsics,
    /// Border margin (px) a point must clear to be labeled visible.
    pub label_margin: f64,
}

impl Default for DatasetMeta {
    fn default() -> Self {
        Self {
            seed: 0,
            trajectory: TrajectorySpec::low(30.0),
            imu: ImuSpec::default(),
            n_points: 240,
            half_extent: Vector3::new(3.0, 3.0, 1.5),
            // camera optical axis along the robot x axis
            sensor_in_robot: Frame::new(
                Vector3::zeros(),
                Quaternion::from_axis_angle(Vector3::y(), std::f64::consts::FRAC_PI_2),
            ),
            intrinsics: PinholeIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480),
            label_margin: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub world: World,
    pub gt: GroundTruth,
    pub imu: Vec<ImuSample>,
    /// Exact projections per camera frame, visible points only.
    pub labels: Vec<Vec<PointLabel>>,
}

impl Dataset {
    /// Generates the dataset described by `meta`. World, trajectory and
    /// inertial noise use decorrelated seeds derived from the base seed.
    pub fn generate(meta: DatasetMeta) -> Result<Self, TrajectoryError> {
        let world = World::generate(meta.n_points, meta.half_extent, meta.seed);
        let gt = generate_trajectory(&meta.trajectory, meta.seed.wrapping_add(0x9e37_79b9))?;
        let imu = synth_imu(&gt, &meta.imu, meta.seed.wrapping_add(0x3c6e_f372));
        let labels = (0..gt.camera_frames())
            .map(|k| {
                let cam = gt.camera_sample(k).pose.compose(&meta.sensor_in_robot);
                project_labels(&world, &cam, &meta.intrinsics, meta.label_margin)
            })
            .collect();
        Ok(Self {
            meta,
            world,
            gt,
            imu,
            labels,
        })
    }

    pub fn camera_frames(&self) -> usize {
        self.gt.camera_frames()
    }

    pub fn save(&self, dir: &Path) -> Result<(), DatasetError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("meta.txt"), render_meta(&self.meta, &self.gt))?;

        let mut w = csv::Writer::from_path(dir.join("world.csv"))?;
        for p in &self.world.points {
            w.serialize(WorldRow {
                id: p.id,
                px: p.position.x,
                py: p.position.y,
                pz: p.position.z,
                nx: p.normal.x,
                ny: p.normal.y,
                nz: p.normal.z,
                texture_seed: p.texture_seed,
            })?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("gt.csv"))?;
        for s in &self.gt.samples {
            let q = s.pose.q.coords();
            w.serialize(GtRow {
                t: s.t,
                px: s.pose.t.x,
                py: s.pose.t.y,
                pz: s.pose.t.z,
                qw: q[0],
                qx: q[1],
                qy: q[2],
                qz: q[3],
                vx: s.vel.x,
                vy: s.vel.y,
                vz: s.vel.z,
                wx: s.omega_body.x,
                wy: s.omega_body.y,
                wz: s.omega_body.z,
                ax: s.acc_world.x,
                ay: s.acc_world.y,
                az: s.acc_world.z,
            })?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("imu.csv"))?;
        for s in &self.imu {
            w.serialize(ImuRow {
                ax: s.acc.x,
                ay: s.acc.y,
                az: s.acc.z,
                gx: s.gyro.x,
                gy: s.gyro.y,
                gz: s.gyro.z,
                dt: s.dt,
                sat_x: s.saturated[0],
                sat_y: s.saturated[1],
                sat_z: s.saturated[2],
            })?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("labels.csv"))?;
        for (frame, labels) in self.labels.iter().enumerate() {
            for l in labels {
                w.serialize(LabelRow {
                    frame: frame as u64,
                    id: l.id,
                    u: l.pixel.x,
                    v: l.pixel.y,
                    depth: l.depth,
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, DatasetError> {
        let meta_text = fs::read_to_string(dir.join("meta.txt"))?;
        let (meta, pos_precision, att_precision) = parse_meta(&meta_text)?;

        let mut points = Vec::new();
        for row in csv::Reader::from_path(dir.join("world.csv"))?.deserialize() {
            let r: WorldRow = row?;
            points.push(WorldPoint {
                id: r.id,
                position: Vector3::new(r.px, r.py, r.pz),
                normal: Vector3::new(r.nx, r.ny, r.nz),
                texture_seed: r.texture_seed,
            });
        }
        let world = World {
            points,
            half_extent: meta.half_extent,
        };

        let mut samples = Vec::new();
        for row in csv::Reader::from_path(dir.join("gt.csv"))?.deserialize() {
            let r: GtRow = row?;
            samples.push(GtSample {
                t: r.t,
                pose: Frame::new(
                    Vector3::new(r.px, r.py, r.pz),
                    Quaternion::from_coords(Vector4::new(r.qw, r.qx, r.qy, r.qz)),
                ),
                vel: Vector3::new(r.vx, r.vy, r.vz),
                omega_body: Vector3::new(r.wx, r.wy, r.wz),
                acc_world: Vector3::new(r.ax, r.ay, r.az),
            });
        }
        if samples.is_empty() {
            return Err(DatasetError::Inconsistent {
                file: "gt.csv",
                detail: "no samples".into(),
            });
        }
        let imu_per_cam = (meta.trajectory.imu_rate_hz / meta.trajectory.cam_rate_hz) as usize;
        let gt = GroundTruth {
            dt: 1.0 / meta.trajectory.imu_rate_hz as f64,
            imu_per_cam,
            samples,
            pos_precision,
            att_precision,
        };

        let mut imu = Vec::new();
        for row in csv::Reader::from_path(dir.join("imu.csv"))?.deserialize() {
            let r: ImuRow = row?;
            imu.push(ImuSample {
                acc: Vector3::new(r.ax, r.ay, r.az),
                gyro: Vector3::new(r.gx, r.gy, r.gz),
                dt: r.dt,
                saturated: [r.sat_x, r.sat_y, r.sat_z],
            });
        }
        if imu.len() != gt.samples.len() - 1 {
            return Err(DatasetError::Inconsistent {
                file: "imu.csv",
                detail: format!(
                    "{} samples for {} trajectory steps",
                    imu.len(),
                    gt.samples.len() - 1
                ),
            });
        }

        let mut labels = vec![Vec::new(); gt.camera_frames()];
        for row in csv::Reader::from_path(dir.join("labels.csv"))?.deserialize() {
            let r: LabelRow = row?;
            let frame = r.frame as usize;
            if frame >= labels.len() {
                return Err(DatasetError::Inconsistent {
                    file: "labels.csv",
                    detail: format!("frame {frame} beyond {} camera frames", labels.len()),
                });
            }
            labels[frame].push(PointLabel {
                id: r.id,
                pixel: Vector2::new(r.u, r.v),
                depth: r.depth,
            });
        }

        Ok(Self {
            meta,
            world,
            gt,
            imu,
            labels,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct WorldRow {
    id: u64,
    px: f64,
    py: f64,
    pz: f64,
    nx: f64,
    ny: f64,
    nz: f64,
    texture_seed: u64,
}

#[derive(Serialize, Deserialize)]
struct GtRow {
    t: f64,
    px: f64,
    py: f64,
    pz: f64,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
    vx: f64,
    vy: f64,
    vz: f64,
    wx: f64,
    wy: f64,
    wz: f64,
    ax: f64,
    ay: f64,
    az: f64,
}

#[derive(Serialize, Deserialize)]
struct ImuRow {
    ax: f64,
    ay: f64,
    az: f64,
    gx: f64,
    gy: f64,
    gz: f64,
    dt: f64,
    sat_x: bool,
    sat_y: bool,
    sat_z: bool,
}

#[derive(Serialize, Deserialize)]
struct LabelRow {
    frame: u64,
    id: u64,
    u: f64,
    v: f64,
    depth: f64,
}

fn vec3_str(v: &Vector3<f64>) -> String {
    format!("{} {} {}", v.x, v.y, v.z)
}

fn render_meta(meta: &DatasetMeta, gt: &GroundTruth) -> String {
    let q = meta.sensor_in_robot.q.coords();
    let k = &meta.intrinsics;
    let rate_limit = match meta.imu.rate_limit {
        Some(r) => format!("{r}"),
        None => "none".into(),
    };
    let dynamics = match meta.trajectory.dynamics {
        DynamicsClass::Low => "low",
        DynamicsClass::High => "high",
    };
    format!(
        "seed = {}\n\
         duration_s = {}\n\
         cam_rate_hz = {}\n\
         imu_rate_hz = {}\n\
         dynamics = {}\n\
         acc_density = {}\n\
         gyro_density = {}\n\
         acc_bias = {}\n\
         gyro_bias = {}\n\
         rate_limit = {}\n\
         gravity = {}\n\
         n_points = {}\n\
         half_extent = {}\n\
         sensor_t = {}\n\
         sensor_q = {} {} {} {}\n\
         fu = {}\nfv = {}\nu0 = {}\nv0 = {}\nwidth = {}\nheight = {}\n\
         label_margin = {}\n\
         pos_precision = {}\n\
         att_precision = {}\n",
        meta.seed,
        meta.trajectory.duration_s,
        meta.trajectory.cam_rate_hz,
        meta.trajectory.imu_rate_hz,
        dynamics,
        meta.imu.acc_density,
        meta.imu.gyro_density,
        vec3_str(&meta.imu.acc_bias),
        vec3_str(&meta.imu.gyro_bias),
        rate_limit,
        meta.imu.gravity,
        meta.n_points,
        vec3_str(&meta.half_extent),
        vec3_str(&meta.sensor_in_robot.t),
        q[0],
        q[1],
        q[2],
        q[3],
        k.fu,
        k.fv,
        k.u0,
        k.v0,
        k.width,
        k.height,
        meta.label_margin,
        gt.pos_precision,
        gt.att_precision,
    )
}

struct MetaMap(HashMap<String, String>);

impl MetaMap {
    fn get(&self, key: &str) -> Result<&str, DatasetError> {
        self.0
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| DatasetError::Meta(format!("missing key `{key}`")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, DatasetError> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| DatasetError::Meta(format!("bad value `{raw}` for `{key}`")))
    }

    fn floats(&self, key: &str, n: usize) -> Result<Vec<f64>, DatasetError> {
        let raw = self.get(key)?;
        let vals: Result<Vec<f64>, _> = raw.split_whitespace().map(str::parse).collect();
        match vals {
            Ok(v) if v.len() == n => Ok(v),
            _ => Err(DatasetError::Meta(format!(
                "`{key}` needs {n} numbers, got `{raw}`"
            ))),
        }
    }

    fn vec3(&self, key: &str) -> Result<Vector3<f64>, DatasetError> {
        let v = self.floats(key, 3)?;
        Ok(Vector3::new(v[0], v[1], v[2]))
    }
}

const META_KEYS: &[&str] = &[
    "seed",
    "duration_s",
    "cam_rate_hz",
    "imu_rate_hz",
    "dynamics",
    "acc_density",
    "gyro_density",
    "acc_bias",
    "gyro_bias",
    "rate_limit",
    "gravity",
    "n_points",
    "half_extent",
    "sensor_t",
    "sensor_q",
    "fu",
    "fv",
    "u0",
    "v0",
    "width",
    "height",
    "label_margin",
    "pos_precision",
    "att_precision",
];

fn parse_meta(text: &str) -> Result<(DatasetMeta, f64, f64), DatasetError> {
    let mut kv = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            DatasetError::Meta(format!("line {}: expected `key = value`", idx + 1))
        })?;
        let key = k.trim().to_string();
        if !META_KEYS.contains(&key.as_str()) {
            return Err(DatasetError::Meta(format!("unknown key `{key}`")));
        }
        if kv.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(DatasetError::Meta(format!("duplicate key `{key}`")));
        }
    }
    let kv = MetaMap(kv);

    let dynamics = match kv.get("dynamics")? {
        "low" => DynamicsClass::Low,
        "high" => DynamicsClass::High,
        other => {
            return Err(DatasetError::Meta(format!(
                "dynamics must be low or high, got `{other}`"
            )))
        }
    };
    let rate_limit = match kv.get("rate_limit")? {
        "none" => None,
        raw => Some(raw.parse().map_err(|_| {
            DatasetError::Meta(format!("bad value `{raw}` for `rate_limit`"))
        })?),
    };
    let q = kv.floats("sensor_q", 4)?;

    let meta = DatasetMeta {
        seed: kv.parse("seed")?,
        trajectory: TrajectorySpec {
            duration_s: kv.parse("duration_s")?,
            cam_rate_hz: kv.parse("cam_rate_hz")?,
            imu_rate_hz: kv.parse("imu_rate_hz")?,
            dynamics,
        },
        imu: ImuSpec {
            acc_density: kv.parse("acc_density")?,
            gyro_density: kv.parse("gyro_density")?,
            acc_bias: kv.vec3("acc_bias")?,
            gyro_bias: kv.vec3("gyro_bias")?,
            rate_limit,
            gravity: kv.parse("gravity")?,
        },
        n_points: kv.parse("n_points")?,
        half_extent: kv.vec3("half_extent")?,
        sensor_in_robot: Frame::new(
            kv.vec3("sensor_t")?,
            Quaternion::from_coords(Vector4::new(q[0], q[1], q[2], q[3])),
        ),
        intrinsics: PinholeIntrinsics::new(
            kv.parse("fu")?,
            kv.parse("fv")?,
            kv.parse("u0")?,
            kv.parse("v0")?,
            kv.parse("width")?,
            kv.parse("height")?,
        ),
        label_margin: kv.parse("label_margin")?,
    };
    if meta.trajectory.cam_rate_hz == 0
        || meta.trajectory.imu_rate_hz % meta.trajectory.cam_rate_hz != 0
    {
        return Err(DatasetError::Meta(format!(
            "imu rate {} not a multiple of camera rate {}",
            meta.trajectory.imu_rate_hz, meta.trajectory.cam_rate_hz
        )));
    }
    Ok((meta, kv.parse("pos_precision")?, kv.parse("att_precision")?))
}

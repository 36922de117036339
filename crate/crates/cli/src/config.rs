use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use flowstab::estimate::FilterPolicy;
use flowstab::lie::GroupTag;
use flowstab::path::{KeyframePolicy, ShootingOptions};
use flowstab::render::DEFAULT_ALPHA;
use flowstab::scene::{parse_key_values, Intrinsics};

/// File name under which `synth` stores the dataset's configuration.
pub const DATASET_CONFIG: &str = "flowstab.cfg";

/// Every tunable of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub group: GroupTag,
    pub intrinsics: Intrinsics,
    pub filter: FilterPolicy,
    pub keyframes: KeyframePolicy,
    pub shooting: ShootingOptions,
    pub alpha: f64,
    pub recenter: bool,
    /// Pixel stride for back-projection.
    pub stride: usize,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            group: GroupTag::Se3,
            intrinsics: Intrinsics {
                fx: 140.0,
                fy: 140.0,
                cx: 79.5,
                cy: 59.5,
                width: 160,
                height: 120,
                depth_scale: 5000.0,
            },
            filter: FilterPolicy::default(),
            keyframes: KeyframePolicy::default(),
            shooting: ShootingOptions::default(),
            alpha: DEFAULT_ALPHA,
            recenter: false,
            stride: 1,
            out: PathBuf::from("."),
            seed: 0,
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub group: Option<GroupTag>,
    pub recenter: bool,
    pub keyframe_interval: Option<usize>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

const INTRINSIC_KEYS: [&str; 7] = ["fx", "fy", "cx", "cy", "width", "height", "depth_scale"];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| anyhow::anyhow!("cannot parse {key} = {value:?}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => bail!("cannot parse {key} = {value:?} as a boolean"),
    }
}

impl PipelineConfig {
    /// Applies `key = value` pairs on top of the defaults. Unknown keys are
    /// rejected.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut c = Self::default();
        let mut k: BTreeMap<String, String> = BTreeMap::new();
        for key in INTRINSIC_KEYS {
            let value = match map.get(key) {
                Some(v) => v.clone(),
                None => default_intrinsic(&c.intrinsics, key),
            };
            k.insert(key.to_string(), value);
        }
        c.intrinsics = Intrinsics::from_map(&k)?;
        for (key, v) in map {
            match key.as_str() {
                k if INTRINSIC_KEYS.contains(&k) => {}
                "group" => c.group = parse(key, v)?,
                "z_min" => c.filter.z_min = parse(key, v)?,
                "z_max" => c.filter.z_max = parse(key, v)?,
                "v_abs_max" => c.filter.v_abs_max = parse(key, v)?,
                "mad_kappa" => c.filter.mad_kappa = parse(key, v)?,
                "d_min" => c.filter.d_min = parse(key, v)?,
                "keyframe_interval" => c.keyframes.interval = parse(key, v)?,
                "angle_threshold_deg" => c.keyframes.angle_threshold_deg = parse(key, v)?,
                "v_floor" => c.keyframes.v_floor = parse(key, v)?,
                "shooting_tolerance" => c.shooting.tolerance = parse(key, v)?,
                "max_iterations" => c.shooting.max_iterations = parse(key, v)?,
                "waypoints" => c.shooting.waypoints = parse(key, v)?,
                "alpha" => c.alpha = parse(key, v)?,
                "recenter" => c.recenter = parse_bool(key, v)?,
                "stride" => c.stride = parse(key, v)?,
                "out" => c.out = PathBuf::from(v),
                "seed" => c.seed = parse(key, v)?,
                other => bail!("unknown config key {other:?}"),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_map(&parse_key_values(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Like [`PipelineConfig::load`], but the file must state the camera
    /// intrinsics rather than fall back to the synthetic defaults.
    pub fn load_with_intrinsics(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let map = parse_key_values(&text)?;
        if let Some(key) = INTRINSIC_KEYS[..6].iter().find(|k| !map.contains_key(**k)) {
            bail!("{} does not set the intrinsics key {key:?}", path.display());
        }
        Self::from_map(&map).with_context(|| format!("in {}", path.display()))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(g) = o.group {
            self.group = g;
        }
        if o.recenter {
            self.recenter = true;
        }
        if let Some(n) = o.keyframe_interval {
            self.keyframes.interval = n;
        }
        if let Some(a) = o.alpha {
            self.alpha = a;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if !self.filter.is_valid() {
            bail!("invalid filter thresholds");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            bail!("alpha must be positive");
        }
        if self.stride == 0 {
            bail!("stride must be at least 1");
        }
        if self.keyframes.interval == 0 {
            bail!("keyframe_interval must be at least 1");
        }
        if !(self.shooting.tolerance > 0.0) || self.shooting.max_iterations == 0 {
            bail!("invalid shooting settings");
        }
        Ok(())
    }

    /// Key/value text that [`PipelineConfig::parse`] reads back to `self`.
    pub fn to_key_values(&self) -> String {
        let mut s = format!("group = {}\n", self.group);
        s += &self.intrinsics.to_key_values();
        s += &format!(
            "z_min = {}\nz_max = {}\nv_abs_max = {}\nmad_kappa = {}\nd_min = {}\n",
            self.filter.z_min, self.filter.z_max, self.filter.v_abs_max, self.filter.mad_kappa, self.filter.d_min
        );
        s += &format!(
            "keyframe_interval = {}\nangle_threshold_deg = {}\nv_floor = {}\n",
            self.keyframes.interval, self.keyframes.angle_threshold_deg, self.keyframes.v_floor
        );
        s += &format!(
            "shooting_tolerance = {}\nmax_iterations = {}\nwaypoints = {}\n",
            self.shooting.tolerance, self.shooting.max_iterations, self.shooting.waypoints
        );
        s += &format!(
            "alpha = {}\nrecenter = {}\nstride = {}\nseed = {}\n",
            self.alpha, self.recenter, self.stride, self.seed
        );
        s
    }
}

fn default_intrinsic(k: &Intrinsics, key: &str) -> String {
    match key {
        "fx" => k.fx.to_string(),
        "fy" => k.fy.to_string(),
        "cx" => k.cx.to_string(),
        "cy" => k.cy.to_string(),
        "width" => k.width.to_string(),
        "height" => k.height.to_string(),
        _ => k.depth_scale.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = PipelineConfig::default();
        let back = PipelineConfig::parse(&c.to_key_values()).unwrap();
        assert_eq!(back.out, PathBuf::from("."));
        assert_eq!(back, c);
        assert_eq!(c.alpha, 0.1);
        assert_eq!(c.keyframes.interval, 30);
    }

    #[test]
    fn overrides_and_errors() {
        let mut c = PipelineConfig::parse("group = sa3\nwidth = 64\nheight = 48\nalpha = 0.5\n").unwrap();
        assert_eq!(c.group, GroupTag::Sa3);
        assert_eq!(c.intrinsics.width, 64);
        c.apply(&Overrides {
            group: Some(GroupTag::Ga3),
            alpha: Some(0.2),
            keyframe_interval: Some(10),
            ..Default::default()
        })
        .unwrap();
        assert_eq!((c.group, c.alpha, c.keyframes.interval), (GroupTag::Ga3, 0.2, 10));
        assert!(PipelineConfig::parse("colour = blue\n").is_err());
        assert!(PipelineConfig::parse("alpha = 0\n").is_err());
        assert!(PipelineConfig::parse("group = so3\n").is_err());
    }

    #[test]
    fn dataset_configs_must_state_intrinsics() {
        let dir = tempfile::TempDir::new().unwrap();
        let p = dir.path().join("a.cfg");
        std::fs::write(&p, "group = se3\nfx = 100\n").unwrap();
        let err = PipelineConfig::load_with_intrinsics(&p).unwrap_err();
        assert!(err.to_string().contains("\"fy\""), "{err}");
        std::fs::write(&p, PipelineConfig::default().to_key_values()).unwrap();
        assert_eq!(PipelineConfig::load_with_intrinsics(&p).unwrap(), PipelineConfig::default());
    }
}

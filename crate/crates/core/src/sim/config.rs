//! Flat key-value scene configuration.
//!
//! Format: one `key = value` pair per line, `#` starts a comment, blank
//! lines ignored. Unknown keys are rejected so typos fail loudly.

use super::presets::{self, PresetScene};
use super::{NoiseSpec, SimError};

/// Parsed scene configuration; `build` instantiates the preset.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    /// One of: forward, overtake, lead_vehicle, two_body, circular.
    pub preset: String,
    pub seed: u64,
    /// Trajectory length in frames (forward and circular presets).
    pub frames: usize,
    /// Static point count (forward and circular presets).
    pub n_points: usize,
    /// Per-frame heading change in radians (circular preset).
    pub theta: f64,
    pub sigma_px: f64,
    pub outlier_fraction: f64,
    pub outlier_box_px: f64,
    pub noise_seed: Option<u64>,
}

impl Default for SimSpec {
    fn default() -> Self {
        SimSpec {
            preset: "forward".into(),
            seed: 7,
            frames: 12,
            n_points: 240,
            theta: 0.04,
            sigma_px: 0.0,
            outlier_fraction: 0.0,
            outlier_box_px: 20.0,
            noise_seed: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, SimError> {
    value
        .parse::<T>()
        .map_err(|_| SimError::BadConfig(format!("cannot parse {key} = {value:?}")))
}

impl SimSpec {
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut spec = SimSpec::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                SimError::BadConfig(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "preset" => spec.preset = value.to_string(),
                "seed" => spec.seed = parse_num(key, value)?,
                "frames" => spec.frames = parse_num(key, value)?,
                "n_points" => spec.n_points = parse_num(key, value)?,
                "theta" => spec.theta = parse_num(key, value)?,
                "sigma_px" => spec.sigma_px = parse_num(key, value)?,
                "outlier_fraction" => spec.outlier_fraction = parse_num(key, value)?,
                "outlier_box_px" => spec.outlier_box_px = parse_num(key, value)?,
                "noise_seed" => spec.noise_seed = Some(parse_num(key, value)?),
                other => {
                    return Err(SimError::BadConfig(format!(
                        "line {}: unknown key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.frames < 2 {
            return Err(SimError::BadConfig(format!("frames must be >= 2, got {}", self.frames)));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(SimError::BadConfig(format!(
                "outlier_fraction must be in [0, 1), got {}",
                self.outlier_fraction
            )));
        }
        if self.sigma_px < 0.0 {
            return Err(SimError::BadConfig(format!("sigma_px must be >= 0, got {}", self.sigma_px)));
        }
        if self.outlier_box_px <= 0.0 {
            return Err(SimError::BadConfig(format!(
                "outlier_box_px must be > 0, got {}",
                self.outlier_box_px
            )));
        }
        Ok(())
    }

    pub fn noise(&self) -> NoiseSpec {
        NoiseSpec {
            sigma_px: self.sigma_px,
            outlier_fraction: self.outlier_fraction,
            outlier_box_px: self.outlier_box_px,
            seed: self.noise_seed.unwrap_or(self.seed),
        }
    }

    pub fn build(&self) -> Result<PresetScene, SimError> {
        match self.preset.as_str() {
            "forward" => Ok(presets::forward(self.seed, self.frames, self.n_points)),
            "overtake" => Ok(presets::overtake(self.seed)),
            "lead_vehicle" => Ok(presets::lead_vehicle(self.seed)),
            "two_body" => Ok(presets::two_body(self.seed)),
            "circular" => Ok(presets::circular(self.seed, self.theta, self.frames, self.n_points)),
            other => Err(SimError::BadConfig(format!("unknown preset {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config_with_comments() {
        let text = "\
# scene
preset = circular
seed = 42      # rng
frames = 9
n_points = 80
theta = 0.03
sigma_px = 0.4
outlier_fraction = 0.15
outlier_box_px = 18
noise_seed = 5
";
        let spec = SimSpec::parse(text).unwrap();
        assert_eq!(spec.preset, "circular");
        assert_eq!(spec.seed, 42);
        assert_eq!(spec.frames, 9);
        assert_eq!(spec.n_points, 80);
        assert_eq!(spec.theta, 0.03);
        assert_eq!(spec.sigma_px, 0.4);
        assert_eq!(spec.outlier_fraction, 0.15);
        assert_eq!(spec.outlier_box_px, 18.0);
        assert_eq!(spec.noise().seed, 5);
        let ps = spec.build().unwrap();
        assert_eq!(ps.trajectory.len(), 9);
    }

    #[test]
    fn defaults_and_noise_seed_fallback() {
        let spec = SimSpec::parse("").unwrap();
        assert_eq!(spec, SimSpec::default());
        assert_eq!(spec.noise().seed, spec.seed);
        assert!(spec.build().is_ok());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(SimSpec::parse("presett = forward"), Err(SimError::BadConfig(_))));
        assert!(matches!(SimSpec::parse("frames = many"), Err(SimError::BadConfig(_))));
        assert!(matches!(SimSpec::parse("just a line"), Err(SimError::BadConfig(_))));
        assert!(matches!(SimSpec::parse("frames = 1"), Err(SimError::BadConfig(_))));
        assert!(matches!(
            SimSpec::parse("outlier_fraction = 1.5"),
            Err(SimError::BadConfig(_))
        ));
        let unknown_preset = SimSpec::parse("preset = spiral").unwrap();
        assert!(matches!(unknown_preset.build(), Err(SimError::BadConfig(_))));
    }
}

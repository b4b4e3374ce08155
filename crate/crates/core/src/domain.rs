//! Domain types shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Row-major 4x4 homogeneous transform: rows 0-2 hold rotation and
/// translation, row 3 is the homogeneous row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transform4 {
    pub m: [[f64; 4]; 4],
}

impl Transform4 {
    pub const IDENTITY: Self = Self {
        m: [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ],
    };

    pub fn from_rotation_translation(r: [[f64; 3]; 3], t: [f64; 3]) -> Self {
        let mut m = Self::IDENTITY.m;
        for i in 0..3 {
            m[i][..3].copy_from_slice(&r[i]);
            m[i][3] = t[i];
        }
        Self { m }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Self::from_rotation_translation([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], t)
    }

    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            row.copy_from_slice(&self.m[i][..3]);
        }
        r
    }

    pub fn flatten(&self) -> [f64; 16] {
        flatten_transform(self)
    }
}

/// `out[4*r + c] = m[r][c]`
pub fn flatten_transform(t: &Transform4) -> [f64; 16] {
    let mut out = [0.0; 16];
    for r in 0..4 {
        for c in 0..4 {
            out[4 * r + c] = t.m[r][c];
        }
    }
    out
}

pub fn unflatten_transform(v: &[f64; 16]) -> Transform4 {
    let mut m = [[0.0; 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            m[r][c] = v[4 * r + c];
        }
    }
    Transform4 { m }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformReport {
    /// max |row3 - (0,0,0,1)|
    pub homogeneous_deviation: f64,
    /// max |R^T R - I|
    pub orthonormality_residual: f64,
    pub tol: f64,
    pub pass: bool,
}

pub fn validate_transform(t: &Transform4, tol: f64) -> TransformReport {
    let expected = [0.0, 0.0, 0.0, 1.0];
    let homogeneous_deviation = t.m[3]
        .iter()
        .zip(expected)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let r = t.rotation();
    let mut orthonormality_residual: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            orthonormality_residual = orthonormality_residual.max((dot - target).abs());
        }
    }
    let finite = t.m.iter().flatten().all(|v| v.is_finite());
    TransformReport {
        homogeneous_deviation,
        orthonormality_residual,
        tol,
        pass: finite && homogeneous_deviation <= tol && orthonormality_residual <= tol,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSample {
    pub t: f64,
    pub head: Transform4,
    pub left_eye: Transform4,
    pub right_eye: Transform4,
}

macro_rules! coded_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident = $code:expr, $token:expr, $label:expr;)* }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $($variant),*
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),*];

            pub fn code(self) -> usize {
                match self {
                    $($name::$variant => $code),*
                }
            }

            pub fn from_code(code: usize) -> Option<Self> {
                Self::ALL.get(code).copied()
            }

            /// Token used in log files.
            pub fn token(self) -> &'static str {
                match self {
                    $($name::$variant => $token),*
                }
            }

            pub fn label(self) -> &'static str {
                match self {
                    $($name::$variant => $label),*
                }
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($token => Ok($name::$variant),)*
                    other => Err(format!("unknown {} `{other}`", stringify!($name))),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.token())
            }
        }
    };
}

coded_enum!(
    /// The five gesture templates, codes 0-4.
    GestureClass {
        Vertical = 0, "V", "Vertical";
        Horizontal = 1, "H", "Horizontal";
        L0 = 2, "L0", "L 0";
        L270 = 3, "L270", "L 270";
        Z0 = 4, "Z0", "Z 0";
    }
);

coded_enum!(
    /// Scaffolding stages from fully guided to free recall, codes 0-3.
    Stage {
        Follow = 0, "FOLLOW", "Follow";
        Fixed = 1, "FIXED", "Fixed";
        IRecall = 2, "IRECALL", "IRecall";
        Recall = 3, "RECALL", "Recall";
    }
);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GestureTrial {
    pub participant_id: String,
    pub gesture: GestureClass,
    pub stage: Stage,
    pub repetition: u32,
    pub frames: Vec<FrameSample>,
}

/// Channel subsets fed to the classifiers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    Head,
    Eyes,
    LeftEye,
    RightEye,
    EyeHead,
}

impl Modality {
    /// Ablation order used in reports.
    pub const ALL: [Modality; 5] = [
        Modality::EyeHead,
        Modality::Eyes,
        Modality::LeftEye,
        Modality::RightEye,
        Modality::Head,
    ];

    pub fn dims(self) -> usize {
        match self {
            Modality::Head | Modality::LeftEye | Modality::RightEye => 16,
            Modality::Eyes => 32,
            Modality::EyeHead => 48,
        }
    }

    /// Column ranges into the 48-wide `left ‖ right ‖ head` frame vector.
    pub fn columns(self) -> std::ops::Range<usize> {
        match self {
            Modality::EyeHead => 0..48,
            Modality::Eyes => 0..32,
            Modality::LeftEye => 0..16,
            Modality::RightEye => 16..32,
            Modality::Head => 32..48,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Head => "head",
            Modality::Eyes => "eyes",
            Modality::LeftEye => "left_eye",
            Modality::RightEye => "right_eye",
            Modality::EyeHead => "eye_head",
        }
    }

    pub fn table_label(self) -> &'static str {
        match self {
            Modality::Head => "Head",
            Modality::Eyes => "Eyes",
            Modality::LeftEye => "Left_Eye",
            Modality::RightEye => "Right_Eye",
            Modality::EyeHead => "Eye_Head",
        }
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown modality `{s}` (expected one of head, eyes, left_eye, right_eye, eye_head)"))
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-frame 48-vector: left eye, right eye, head, each flattened row-major.
pub fn frame_vector(frame: &FrameSample) -> [f64; 48] {
    let mut v = [0.0; 48];
    v[..16].copy_from_slice(&frame.left_eye.flatten());
    v[16..32].copy_from_slice(&frame.right_eye.flatten());
    v[32..].copy_from_slice(&frame.head.flatten());
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_flattens_row_major() {
        assert_eq!(
            flatten_transform(&Transform4::IDENTITY),
            [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]
        );
    }

    #[test]
    fn translation_lands_in_last_column() {
        let v = Transform4::translation([0.1, -0.2, 0.45]).flatten();
        assert_eq!((v[3], v[7], v[11]), (0.1, -0.2, 0.45));
        let mut rest = v;
        rest[3] = 0.0;
        rest[7] = 0.0;
        rest[11] = 0.0;
        assert_eq!(rest, Transform4::IDENTITY.flatten());
    }

    proptest! {
        #[test]
        fn flatten_unflatten_round_trip(values in proptest::array::uniform16(-1e6f64..1e6)) {
            let t = unflatten_transform(&values);
            prop_assert_eq!(t.flatten(), values);
            prop_assert_eq!(unflatten_transform(&t.flatten()), t);
        }
    }

    #[test]
    fn identity_validates_with_zero_residuals() {
        let r = validate_transform(&Transform4::IDENTITY, 1e-6);
        assert!(r.pass);
        assert_eq!(
            (r.homogeneous_deviation, r.orthonormality_residual),
            (0.0, 0.0)
        );
    }

    #[test]
    fn bad_homogeneous_row_fails() {
        let mut t = Transform4::IDENTITY;
        t.m[3][3] = 1.01;
        let r = validate_transform(&t, 1e-6);
        assert!(!r.pass);
        assert!((r.homogeneous_deviation - 0.01).abs() < 1e-12);
    }

    #[test]
    fn scaled_rotation_fails_orthonormality() {
        let t = Transform4::from_rotation_translation(
            [[1.1, 0.0, 0.0], [0.0, 1.1, 0.0], [0.0, 0.0, 1.1]],
            [0.0; 3],
        );
        let r = validate_transform(&t, 1e-6);
        assert!(!r.pass);
        // diag of R^T R is 1.21
        assert!((r.orthonormality_residual - 0.21).abs() < 1e-12);
    }

    #[test]
    fn codes_are_stable() {
        let g: Vec<usize> = GestureClass::ALL.iter().map(|g| g.code()).collect();
        assert_eq!(g, vec![0, 1, 2, 3, 4]);
        assert_eq!(GestureClass::ALL[4], GestureClass::Z0);
        let s: Vec<usize> = Stage::ALL.iter().map(|s| s.code()).collect();
        assert_eq!(s, vec![0, 1, 2, 3]);
        for g in GestureClass::ALL {
            assert_eq!(g.token().parse::<GestureClass>().unwrap(), *g);
            assert_eq!(GestureClass::from_code(g.code()), Some(*g));
            let json = serde_json::to_string(g).unwrap();
            assert_eq!(serde_json::from_str::<GestureClass>(&json).unwrap(), *g);
        }
        for s in Stage::ALL {
            assert_eq!(s.token().parse::<Stage>().unwrap(), *s);
        }
    }

    #[test]
    fn modality_dimensions() {
        assert_eq!(Modality::Head.dims(), 16);
        assert_eq!(Modality::Eyes.dims(), 32);
        assert_eq!(Modality::EyeHead.dims(), 48);
        for m in Modality::ALL {
            assert_eq!(m.columns().len(), m.dims());
            assert_eq!(m.name().parse::<Modality>().unwrap(), m);
        }
    }
}

//! Row-major JSON encodings for nalgebra types, so documents read like the math.

pub mod mat3 {
    use nalgebra::Matrix3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Matrix3<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]));
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix3<f64>, D::Error> {
        let rows = <[[f64; 3]; 3]>::deserialize(d)?;
        Ok(Matrix3::from_fn(|i, j| rows[i][j]))
    }
}

pub mod vec3 {
    use nalgebra::Vector3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vector3<f64>, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector3<f64>, D::Error> {
        let a = <[f64; 3]>::deserialize(d)?;
        Ok(Vector3::new(a[0], a[1], a[2]))
    }
}

pub mod vec3_list {
    use nalgebra::Vector3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Vector3<f64>], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<[f64; 3]> = v.iter().map(|p| [p.x, p.y, p.z]).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vector3<f64>>, D::Error> {
        let rows = Vec::<[f64; 3]>::deserialize(d)?;
        Ok(rows
            .into_iter()
            .map(|a| Vector3::new(a[0], a[1], a[2]))
            .collect())
    }
}

pub mod mat3_list {
    use nalgebra::Matrix3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Matrix3<f64>], s: S) -> Result<S::Ok, S::Error> {
        let all: Vec<[[f64; 3]; 3]> = v
            .iter()
            .map(|m| std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)])))
            .collect();
        all.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Matrix3<f64>>, D::Error> {
        let all = Vec::<[[f64; 3]; 3]>::deserialize(d)?;
        Ok(all
            .into_iter()
            .map(|rows| Matrix3::from_fn(|i, j| rows[i][j]))
            .collect())
    }
}

//! Great-circle distance on a spherical Earth.

const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Haversine distance in meters between two (lat, lon) points in degrees.
pub fn great_circle_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_and_known_distances() {
        assert_eq!(great_circle_m(40.0, -74.0, 40.0, -74.0), 0.0);
        // one degree of latitude is ~111.2 km
        let d = great_circle_m(0.0, 0.0, 1.0, 0.0);
        assert!((d - 111_195.0).abs() < 10.0, "{d}");
        // symmetric
        let a = great_circle_m(40.74, -74.17, 51.5, -0.12);
        let b = great_circle_m(51.5, -0.12, 40.74, -74.17);
        assert!((a - b).abs() < 1e-6);
    }
}

//! Record builders shared by unit tests.

use crate::ingest::{
    normalize, parse_ooni_measurement, parse_satellite_line, GeoDb, NormalizedRecord,
    RawOoniMeasurement, RawPayload, RawSatelliteProbe,
};

pub const SATELLITE_LINE: &str = r#"{"vp":"58.32.0.9","location":{"country_code":"CN"},"test_url":"example.com","start_time":"2021-07-03T10:00:00Z","end_time":"2021-07-03T10:00:02Z","anomaly":false,"passed_liveness":true,"in_control_group":true,"response":[{"url":"a.root-servers.net","rcode":0,"has_type_a":true,"response":[{"ip":"198.41.0.4"}]},{"url":"example.com","rcode":0,"has_type_a":true,"response":[{"ip":"93.184.216.34","ip_match":true,"http_match":true,"cert_match":true,"asnum_match":true,"asname_match":true}]},{"url":"a.root-servers.net","rcode":0,"has_type_a":true,"response":[{"ip":"198.41.0.4"}]}]}"#;

pub const OONI_LINE: &str = r#"{"measurement_start_time":"2021-07-03 10:00:00","test_start_time":"2021-07-03 09:59:58","test_runtime":1.25,"probe_asn":"AS4134","probe_cc":"CN","probe_network_name":"CHINANET-BACKBONE","resolver_asn":"AS4134","resolver_network_name":"CHINANET-BACKBONE","input":"http://example.com/","test_keys":{"dns_consistency":"consistent","body_length_match":true,"body_proportion":0.98,"status_code_match":true,"headers_match":true,"title_match":true,"blocking":false,"queries":[{"answers":[{"answer_type":"A","ipv4":"93.184.216.34","asn":15133,"as_org_name":"Edgecast"}]}]}}"#;

pub fn geodb() -> GeoDb {
    let mut db = GeoDb::new();
    db.insert(
        "58.32.0.0".parse().unwrap(),
        16,
        4812,
        "China Telecom",
        "CN",
    );
    db.insert("93.184.216.0".parse().unwrap(), 24, 15133, "Edgecast", "US");
    db.insert("198.41.0.0".parse().unwrap(), 24, 397197, "Root", "US");
    db
}

pub fn satellite_record(edit: impl FnOnce(&mut RawSatelliteProbe)) -> NormalizedRecord {
    let mut p = parse_satellite_line(SATELLITE_LINE, 0).unwrap();
    edit(&mut p);
    normalize(RawPayload::Satellite(p), "fixture.jsonl", 0, &geodb()).unwrap()
}

pub fn ooni_record(edit: impl FnOnce(&mut RawOoniMeasurement)) -> NormalizedRecord {
    let mut m = parse_ooni_measurement(OONI_LINE, 0).unwrap();
    edit(&mut m);
    normalize(RawPayload::Ooni(m), "fixture.jsonl", 0, &geodb()).unwrap()
}

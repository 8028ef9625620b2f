"""Synthetic per-app feature sets for offline runs and tests.

Malicious and benign apps draw most features from disjoint pools, plus some
shared ones, so the stub pipeline yields a learnable (if easy) problem.
"""

from __future__ import annotations

import numpy as np

from .classifier import BENIGN, MALICIOUS
from .features import AppFeatures, FeatureRecord, FeatureSubtype, assemble_views

S = FeatureSubtype

POOLS: dict[str, dict[FeatureSubtype, list[str]]] = {
    MALICIOUS: {
        S.REQUESTED_PERMISSION: [
            "android.permission.SEND_SMS", "android.permission.READ_SMS", "android.permission.RECEIVE_SMS",
            "android.permission.READ_PHONE_STATE", "android.permission.READ_CONTACTS",
            "android.permission.GET_TASKS", "android.permission.SYSTEM_ALERT_WINDOW",
        ],
        S.RESTRICTED_API: [
            "Landroid/telephony/SmsManager.sendTextMessage", "Landroid/telephony/TelephonyManager.getDeviceId",
            "Landroid/telephony/TelephonyManager.getSubscriberId", "Landroid/app/ActivityManager.getRunningTasks",
        ],
        S.SUSPICIOUS_API: [
            "Ljava/lang/Runtime.exec", "Ldalvik/system/DexClassLoader.<init>", "Ljavax/crypto/Cipher.doFinal",
            "Landroid/telephony/TelephonyManager.getSimSerialNumber",
        ],
        S.URL: ["pay-sms.example.cn", "c2.botnet-example.ru", "update.apk-mirror.example.biz"],
        S.USES_FEATURE: ["android.hardware.telephony", "android.hardware.camera"],
    },
    BENIGN: {
        S.REQUESTED_PERMISSION: [
            "android.permission.VIBRATE", "android.permission.WAKE_LOCK", "android.permission.ACCESS_NETWORK_STATE",
            "android.permission.CAMERA", "android.permission.ACCESS_WIFI_STATE",
        ],
        S.RESTRICTED_API: [
            "Landroid/net/ConnectivityManager.getActiveNetworkInfo", "Landroid/os/Vibrator.vibrate",
            "Landroid/net/wifi/WifiManager.isWifiEnabled",
        ],
        S.SUSPICIOUS_API: ["Landroid/content/Context.getSystemService"],
        S.URL: ["fonts.googleapis.com", "graph.facebook.com", "cdn.example.org"],
        S.USES_FEATURE: ["android.hardware.touchscreen", "android.hardware.screen.landscape"],
    },
}
SHARED: dict[FeatureSubtype, list[str]] = {
    S.REQUESTED_PERMISSION: ["android.permission.INTERNET", "android.permission.WRITE_EXTERNAL_STORAGE"],
    S.RESTRICTED_API: ["Landroid/location/LocationManager.getLastKnownLocation"],
    S.SUSPICIOUS_API: [],
    S.URL: ["www.google.com"],
    S.USES_FEATURE: ["android.hardware.location.gps"],
}

# permissions a restricted API implies, for a plausible used-permission list
_API_PERMISSION = {
    "Landroid/telephony/SmsManager.sendTextMessage": "android.permission.SEND_SMS",
    "Landroid/telephony/TelephonyManager.getDeviceId": "android.permission.READ_PHONE_STATE",
    "Landroid/telephony/TelephonyManager.getSubscriberId": "android.permission.READ_PHONE_STATE",
    "Landroid/app/ActivityManager.getRunningTasks": "android.permission.GET_TASKS",
    "Landroid/net/ConnectivityManager.getActiveNetworkInfo": "android.permission.ACCESS_NETWORK_STATE",
    "Landroid/os/Vibrator.vibrate": "android.permission.VIBRATE",
    "Landroid/net/wifi/WifiManager.isWifiEnabled": "android.permission.ACCESS_WIFI_STATE",
    "Landroid/location/LocationManager.getLastKnownLocation": "android.permission.ACCESS_FINE_LOCATION",
}


def _pick(rng: np.random.Generator, pool: list[str], lo: int, hi: int) -> list[str]:
    if not pool:
        return []
    n = int(rng.integers(lo, min(hi, len(pool)) + 1))
    return [pool[i] for i in sorted(rng.choice(len(pool), size=n, replace=False))]


def synthetic_app(apk_id: str, label: str, rng: np.random.Generator) -> AppFeatures:
    own, records = POOLS[label], []
    requested = _pick(rng, own[S.REQUESTED_PERMISSION], 1, 4) + _pick(rng, SHARED[S.REQUESTED_PERMISSION], 0, 2)
    restricted = _pick(rng, own[S.RESTRICTED_API], 0, 3) + _pick(rng, SHARED[S.RESTRICTED_API], 0, 1)
    used = [p for p in dict.fromkeys(_API_PERMISSION[a] for a in restricted) if p in requested]
    records += [FeatureRecord(S.REQUESTED_PERMISSION, p) for p in requested]
    records += [FeatureRecord(S.USED_PERMISSION, p) for p in used]
    records += [FeatureRecord(S.RESTRICTED_API, a) for a in restricted]
    for st, lo, hi in ((S.SUSPICIOUS_API, 0, 2), (S.URL, 0, 2), (S.USES_FEATURE, 0, 2)):
        names = _pick(rng, own[st], lo, hi) + _pick(rng, SHARED[st], 0, 1)
        records += [FeatureRecord(st, n) for n in names]
    package = f"com.synthetic.{label[:3]}.{apk_id.replace('-', '_')}"
    return AppFeatures(apk_id, package, tuple(assemble_views(records, package)))


def synthetic_corpus(n_apps: int, seed: int = 0, malicious_fraction: float = 0.5) -> list[tuple[AppFeatures, str]]:
    rng = np.random.default_rng(seed)
    n_mal = int(round(n_apps * malicious_fraction))
    out = []
    for i in range(n_apps):
        label = MALICIOUS if i < n_mal else BENIGN
        out.append((synthetic_app(f"app{i:05d}", label, rng), label))
    return out


def random_feature_records(rng: np.random.Generator, max_per_subtype: int = 6) -> list[FeatureRecord]:
    """Arbitrary (possibly duplicated, possibly empty) feature lists across all subtypes."""
    records = []
    for st in FeatureSubtype:
        for _ in range(int(rng.integers(0, max_per_subtype + 1))):
            records.append(FeatureRecord(st, f"{st.value}.f{int(rng.integers(0, 10))}"))
    order = rng.permutation(len(records))
    return [records[i] for i in order]

"""Response texts with hand-traced expected priors.

Each expectation was derived by listing the regex tokens by hand and then
walking adjacent pairs from the end: a pair is kept when |lat| <= 90 and
|lon| <= 180. ``None`` means no pair qualifies.
"""

EXTRACTION_CASES = [
    # clean pairs
    ("48.8566, 2.3522", (48.8566, 2.3522)),
    ("...final answer: 48.8566, 2.3522", (48.8566, 2.3522)),
    ("Answer: -33.86, 151.21", (-33.86, 151.21)),
    ("+45.5, -73.56", (45.5, -73.56)),
    ("Coordinates: (-22.9068, -43.1729) Rio de Janeiro", (-22.9068, -43.1729)),
    ("Final answer: 48.8566,2.3522", (48.8566, 2.3522)),
    ("12.5 N 100.3 E", (12.5, 100.3)),
    ("The location is .5, .25", (0.5, 0.25)),
    ("lat=-0.0001 lon=0.0001", (-0.0001, 0.0001)),
    # range edges; 180 wraps to -180
    ("-90.0, -180.0", (-90.0, -180.0)),
    ("90.0, 180.0", (90.0, -180.0)),
    # reasoning text with years and counts: [1850, 40.71, -74.00]
    ("city founded in 1850 ... coordinates 40.71, -74.00", (40.71, -74.0)),
    # [1, 2, 2100000, 48.85, 2.35]
    ("Step 1: signs in French. Step 2: population 2100000. Final: 48.85, 2.35", (48.85, 2.35)),
    # [3, 2, 51.5074, -0.1278]
    ("There are 3 people and 2 cars; I think it is near 51.5074, -0.1278.", (51.5074, -0.1278)),
    # [1, 2, 3, 4, 35.6762, 139.6503]
    ("1. Continent: Asia 2. Country: Japan 3. City: Tokyo 4. Coordinates: 35.6762, 139.6503",
     (35.6762, 139.6503)),
    # [35.6762, 139.6503, 0.8]: (139.6503, 0.8) fails on latitude
    ("35.6762, 139.6503 (confidence: 0.8)", (35.6762, 139.6503)),
    # [40.7128, -74.006, 95]: the trailing count forms the last valid pair
    ("Latitude: 40.7128, Longitude: -74.0060. Confidence 95", (-74.006, 95.0)),
    # integers only; unsigned integers drop their sign: [33, 151]
    ("Coordinates: 35, 139", (35.0, 139.0)),
    ("Lat -33, Lon 151", (33.0, 151.0)),
    ("Somewhere in Europe, maybe 52-13", (52.0, 13.0)),
    # [1, 5, 3.0]
    ("1e5, 3.0", (5.0, 3.0)),
    # degenerate
    ("I cannot determine the location.", None),
    ("", None),
    ("The answer is 7", None),
    # [2023, 4]: latitude 2023 out of range
    ("In the year 2023 photo 4 was taken.", None),
    # [45.0, 200.0]: longitude beyond 180
    ("45.0, 200.0", None),
    # [91.5, 10.2]
    ("91.5, 10.2", None),
]

# ModelGiF gradient-field fingerprints

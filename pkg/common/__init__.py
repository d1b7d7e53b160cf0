# Grid, configuration and table I/O shared by the lab

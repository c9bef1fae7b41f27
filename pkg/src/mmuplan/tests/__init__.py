# Tests package for mmuplan
